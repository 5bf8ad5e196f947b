"""Profanity lexicon: loading, phrase matching, and masking.

Matching is token-based so multi-word entries ("piece of shit") are found
as units and substrings never match ("shittalk" does not contain "shit").
Tokens are maximal runs of word characters; every punctuation character is
its own token, so punctuation breaks phrase adjacency.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import LexiconError

logger = logging.getLogger(__name__)

DEFAULT_MASK_TOKEN = "[MASK]"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int


def tokenize(text: str) -> list[Token]:
    """Split text into word tokens and single-character punctuation tokens."""
    return [Token(m.group(0), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def normalize_phrase(raw: str) -> str:
    """Lowercase and collapse internal whitespace to single spaces."""
    return " ".join(raw.split()).lower()


@dataclass(frozen=True)
class Lexicon:
    """An ordered, deduplicated set of normalized swear phrases."""

    entries: tuple[str, ...]
    source_name: str = ""

    def __post_init__(self) -> None:
        if not self.entries:
            raise LexiconError("empty lexicon")
        index: dict[tuple[str, ...], str] = {}
        seen: set[str] = set()
        for phrase in self.entries:
            if not phrase:
                raise LexiconError("lexicon entry is empty")
            if phrase != normalize_phrase(phrase):
                raise LexiconError(f"lexicon entry not normalized: {phrase!r}")
            if phrase in seen:
                raise LexiconError(f"duplicate lexicon entry: {phrase!r}")
            seen.add(phrase)
            tokens = tuple(t.text for t in tokenize(phrase))
            if not tokens:
                raise LexiconError(f"lexicon entry has no tokens: {phrase!r}")
            # Two entries can tokenize identically (e.g. differ only in
            # punctuation spacing); the earlier entry wins.
            index.setdefault(tokens, phrase)
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_max_tokens", max(len(k) for k in index))
        object.__setattr__(self, "_entry_set", seen)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, phrase: str) -> bool:
        return phrase in self._entry_set  # type: ignore[attr-defined]


@dataclass(frozen=True)
class SwearMatch:
    """One non-overlapping lexicon hit: token span is end-exclusive."""

    phrase: str
    token_span: tuple[int, int]
    char_span: tuple[int, int]


def load_lexicon(path: str | Path) -> Lexicon:
    """Load a lexicon file: one phrase per line, UTF-8, '#' lines ignored.

    Phrases are normalized (lowercased, whitespace collapsed) and
    deduplicated in file order. Raises LexiconError if the file is
    unreadable or empty after normalization.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise LexiconError(f"unreadable lexicon file {path}: {exc}") from exc
    phrases: list[str] = []
    seen: set[str] = set()
    for line in text.splitlines():
        if line.lstrip().startswith("#"):
            continue
        phrase = normalize_phrase(line)
        if not phrase or phrase in seen:
            continue
        seen.add(phrase)
        phrases.append(phrase)
    if not phrases:
        raise LexiconError(f"empty lexicon: {path}")
    logger.info("loaded lexicon %s: %d entries", path, len(phrases))
    return Lexicon(entries=tuple(phrases), source_name=path.name)


def find_matches(text: str, lexicon: Lexicon) -> list[SwearMatch]:
    """Find all lexicon phrases in text.

    Case-insensitive, token-boundary matching. Overlapping candidates are
    resolved longest-match-first, then leftmost, so "piece of shit" beats
    "shit" inside it. The result is non-overlapping and sorted by start.
    """
    tokens = tokenize(text)
    if not tokens:
        return []
    lowered = [t.text.lower() for t in tokens]
    index: dict[tuple[str, ...], str] = lexicon._index  # type: ignore[attr-defined]
    widest: int = lexicon._max_tokens  # type: ignore[attr-defined]
    n = len(tokens)

    candidates: list[tuple[int, int, str]] = []
    for i in range(n):
        for width in range(min(widest, n - i), 0, -1):
            phrase = index.get(tuple(lowered[i:i + width]))
            if phrase is not None:
                candidates.append((width, i, phrase))
    candidates.sort(key=lambda c: (-c[0], c[1]))

    taken = bytearray(n)
    chosen: list[SwearMatch] = []
    for width, i, phrase in candidates:
        if any(taken[i:i + width]):
            continue
        for j in range(i, i + width):
            taken[j] = 1
        chosen.append(SwearMatch(
            phrase=phrase,
            token_span=(i, i + width),
            char_span=(tokens[i].start, tokens[i + width - 1].end),
        ))
    chosen.sort(key=lambda m: m.token_span[0])
    return chosen


def _check_mask_token(mask_token: str, lexicon: Lexicon) -> None:
    if not mask_token or not mask_token.strip():
        raise LexiconError("mask token must be non-empty")
    mask_tokens = {t.text.lower() for t in tokenize(mask_token)}
    if not mask_tokens:
        raise LexiconError(f"mask token {mask_token!r} has no tokens")
    # Reject any entry sharing a token with the mask. This is stricter than
    # "mask is not an entry": it guarantees rescanning masked text finds
    # nothing, because no post-mask match can include a mask-derived token.
    index: dict[tuple[str, ...], str] = lexicon._index  # type: ignore[attr-defined]
    for entry_tokens, phrase in index.items():
        if mask_tokens.intersection(entry_tokens):
            raise LexiconError(
                f"mask token {mask_token!r} collides with lexicon entry {phrase!r}"
            )


def mask_text(text: str, lexicon: Lexicon, mask_token: str = DEFAULT_MASK_TOKEN) -> str:
    """Replace every matched lexicon span with exactly one mask token.

    Unmatched text is preserved byte for byte; rescanning the result finds
    no matches, which also makes masking idempotent.
    """
    _check_mask_token(mask_token, lexicon)
    matches = find_matches(text, lexicon)
    if not matches:
        return text
    parts: list[str] = []
    prev = 0
    for m in matches:
        parts.append(text[prev:m.char_span[0]])
        parts.append(mask_token)
        prev = m.char_span[1]
    parts.append(text[prev:])
    return "".join(parts)
