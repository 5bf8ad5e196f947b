import pytest

from cbdebias.errors import LexiconError
from cbdebias.lexicon import (
    Lexicon,
    SwearMatch,
    find_matches,
    load_lexicon,
    mask_text,
    normalize_phrase,
    tokenize,
)


def brute_force_matches(text, phrases):
    """Independent scanner: try every phrase at every token position, then
    apply the same tie rules (longest first, then leftmost, non-overlap)."""
    tokens = [t.text.lower() for t in tokenize(text)]
    phrase_tokens = {p: tuple(t.text for t in tokenize(p)) for p in phrases}
    candidates = []
    for phrase, ptoks in phrase_tokens.items():
        w = len(ptoks)
        for i in range(len(tokens) - w + 1):
            if tuple(tokens[i:i + w]) == ptoks:
                candidates.append((w, i, phrase))
    candidates.sort(key=lambda c: (-c[0], c[1]))
    taken = [False] * len(tokens)
    out = []
    for w, i, phrase in candidates:
        if any(taken[i:i + w]):
            continue
        for j in range(i, i + w):
            taken[j] = True
        out.append((phrase, i, i + w))
    return sorted(out, key=lambda m: m[1])


def random_documents(rng, lexicon_phrases, n_docs, fillers=None):
    fillers = fillers or ["lorem", "ipsum", "dolor", "sit", "amet", "okay",
                          "really", "today", "friend", "game"]
    docs = []
    for _ in range(n_docs):
        n_tok = int(rng.integers(5, 60))
        words = [fillers[int(rng.integers(0, len(fillers)))] for _ in range(n_tok)]
        for _ in range(int(rng.integers(0, 4))):
            phrase = lexicon_phrases[int(rng.integers(0, len(lexicon_phrases)))]
            pos = int(rng.integers(0, len(words) + 1))
            words[pos:pos] = phrase.split()
        if rng.random() < 0.3:
            pos = int(rng.integers(0, len(words)))
            words[pos] = words[pos] + ","
        docs.append(" ".join(words))
    return docs


FUZZ_PHRASES = ("frak", "smeg", "gorram", "piece of junk", "utter smeg head",
                "zark off", "felgercarb")


class TestLoadLexicon:
    def test_normalization_and_dedup(self, tmp_path):
        path = tmp_path / "lex.txt"
        path.write_text("Fuck\npiece  of shit\nfuck\n", encoding="utf-8")
        lex = load_lexicon(path)
        assert lex.entries == ("fuck", "piece of shit")
        assert len(lex) == 2

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "lex.txt"
        path.write_text("", encoding="utf-8")
        with pytest.raises(LexiconError, match="empty lexicon"):
            load_lexicon(path)

    def test_comment_lines_ignored(self, tmp_path):
        path = tmp_path / "lex.txt"
        path.write_text("# header\nfrak\n  # another\nsmeg\n", encoding="utf-8")
        lex = load_lexicon(path)
        assert lex.entries == ("frak", "smeg")

    def test_missing_file(self, tmp_path):
        with pytest.raises(LexiconError, match="unreadable"):
            load_lexicon(tmp_path / "nope.txt")

    def test_large_lexicon_count_preserved(self, tmp_path):
        # stand-in for a full published list: 535 distinct entries
        entries = [f"swear{i:03d}" for i in range(535)]
        path = tmp_path / "big.txt"
        path.write_text("".join(e + "\n" for e in entries), encoding="utf-8")
        assert len(load_lexicon(path)) == 535


class TestLexiconInvariants:
    def test_rejects_empty(self):
        with pytest.raises(LexiconError):
            Lexicon(entries=())

    def test_rejects_unnormalized(self):
        with pytest.raises(LexiconError):
            Lexicon(entries=("Frak",))
        with pytest.raises(LexiconError):
            Lexicon(entries=("a  b",))

    def test_rejects_duplicates(self):
        with pytest.raises(LexiconError):
            Lexicon(entries=("frak", "frak"))

    def test_normalize_phrase(self):
        assert normalize_phrase("  Piece  OF\tshit ") == "piece of shit"


class TestFindMatches:
    def test_longest_match_wins(self):
        lex = Lexicon(entries=("shit", "piece of shit"))
        matches = find_matches("You are a piece of shit", lex)
        assert len(matches) == 1
        assert matches[0].phrase == "piece of shit"
        assert matches[0].token_span == (3, 6)

    def test_token_boundary_no_substring(self):
        lex = Lexicon(entries=("shit",))
        assert find_matches("shittalk is fine", lex) == []

    def test_case_insensitive(self):
        lex = Lexicon(entries=("frak",))
        matches = find_matches("FRAK this", lex)
        assert [m.phrase for m in matches] == ["frak"]

    def test_punctuation_breaks_phrases(self):
        lex = Lexicon(entries=("piece of junk", "junk"))
        matches = find_matches("piece, of junk", lex)
        assert [m.phrase for m in matches] == ["junk"]

    def test_empty_text(self):
        lex = Lexicon(entries=("frak",))
        assert find_matches("", lex) == []

    def test_char_spans_slice_the_phrase(self):
        lex = Lexicon(entries=("zark off",))
        text = "please Zark  Off now"
        (m,) = find_matches(text, lex)
        assert text[m.char_span[0]:m.char_span[1]] == "Zark  Off"

    def test_against_brute_force_scanner(self, rng):
        lex = Lexicon(entries=FUZZ_PHRASES)
        for doc in random_documents(rng, FUZZ_PHRASES, 1000):
            got = [(m.phrase, *m.token_span) for m in find_matches(doc, lex)]
            assert got == brute_force_matches(doc, FUZZ_PHRASES)


class TestMaskText:
    def test_basic_replacement(self):
        lex = Lexicon(entries=("piece of shit",))
        assert mask_text("You are a piece of shit", lex) == "You are a [MASK]"

    def test_no_matches_identity(self):
        lex = Lexicon(entries=("frak",))
        text = "nothing to see here"
        assert mask_text(text, lex) is text

    def test_mask_token_collision_rejected(self):
        lex = Lexicon(entries=("frak", "mask"))
        with pytest.raises(LexiconError, match="collides"):
            mask_text("whatever", lex, "[MASK]")

    def test_empty_mask_rejected(self):
        lex = Lexicon(entries=("frak",))
        with pytest.raises(LexiconError):
            mask_text("x", lex, "")

    def test_custom_mask_token(self):
        lex = Lexicon(entries=("frak",))
        assert mask_text("oh frak!", lex, "<censored>") == "oh <censored>!"

    def test_fuzz_rescan_empty_and_idempotent(self, rng):
        lex = Lexicon(entries=FUZZ_PHRASES)
        for doc in random_documents(rng, FUZZ_PHRASES, 1000):
            masked = mask_text(doc, lex)
            assert find_matches(masked, lex) == []
            assert mask_text(masked, lex) == masked


class TestProperties:
    def test_reconstruction_from_spans(self, rng):
        lex = Lexicon(entries=FUZZ_PHRASES)
        for doc in random_documents(rng, FUZZ_PHRASES, 200):
            matches = find_matches(doc, lex)
            # non-overlap, sorted
            for a, b in zip(matches, matches[1:]):
                assert a.token_span[1] <= b.token_span[0]
                assert a.char_span[1] <= b.char_span[0]
            # unmatched segments + match texts rebuild the document
            parts, prev = [], 0
            for m in matches:
                parts.append(doc[prev:m.char_span[0]])
                parts.append(doc[m.char_span[0]:m.char_span[1]])
                prev = m.char_span[1]
            parts.append(doc[prev:])
            assert "".join(parts) == doc

    def test_match_count_bounded_by_tokens(self, rng):
        lex = Lexicon(entries=FUZZ_PHRASES)
        for doc in random_documents(rng, FUZZ_PHRASES, 200):
            assert len(find_matches(doc, lex)) <= len(tokenize(doc))

    def test_match_is_dataclass_with_spans(self):
        m = SwearMatch(phrase="frak", token_span=(0, 1), char_span=(0, 4))
        assert m.phrase == "frak"
