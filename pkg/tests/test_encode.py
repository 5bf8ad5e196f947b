import json

import numpy as np
import pytest

from cbdebias.corpus import GeneratorConfig, aggregate_and_clean, generate_synthetic_corpus
from cbdebias.encode import (
    EncoderConfig,
    encode_corpus,
    export_embeddings,
    fnv1a_64,
    import_embeddings,
    synthetic_embedding,
    toy_encode,
)
from cbdebias.errors import DataError, UsageError
from cbdebias.lexicon import Lexicon
from cbdebias.model import embedding_loss

CFG = EncoderConfig(dim=16, layers=4, vocab_buckets=512, seed=3)


class TestHash:
    def test_known_vectors(self):
        # standard FNV-1a 64-bit reference values
        assert fnv1a_64(b"") == 0xCBF29CE484222325
        assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
        assert fnv1a_64(b"foobar") == 0x85944171F73967E8


class TestEncoderConfig:
    def test_validation(self):
        with pytest.raises(UsageError):
            EncoderConfig(dim=1)
        with pytest.raises(UsageError):
            EncoderConfig(layers=0)
        with pytest.raises(UsageError):
            EncoderConfig(dim=64, vocab_buckets=32)
        with pytest.raises(UsageError):
            EncoderConfig(hash_name="md5")


class TestToyEncode:
    def test_bit_identical_reruns(self):
        a = toy_encode("some frei text here", CFG)
        b = toy_encode("some frei text here", CFG)
        assert np.array_equal(a, b)

    def test_casing_invariance(self):
        a = toy_encode("Hello World", CFG)
        b = toy_encode("hello world", CFG)
        assert np.array_equal(a, b)

    def test_unit_norm_every_layer(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 30))
            text = " ".join(f"tok{int(rng.integers(0, 50))}" for _ in range(n))
            v = toy_encode(text, CFG)
            assert v.shape == (CFG.layers, CFG.dim)
            np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-6)

    def test_empty_text_sentinel(self):
        v = toy_encode("", CFG)
        assert v.shape == (CFG.layers, CFG.dim)
        np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-6)

    def test_single_token_change_moves_vector(self, rng):
        base_words = [f"tok{i}" for i in range(20)]
        collisions = 0
        for i in range(100):
            words = list(base_words)
            j = int(rng.integers(0, len(words)))
            text_a = " ".join(words)
            words[j] = f"other{i}"
            text_b = " ".join(words)
            if np.array_equal(toy_encode(text_a, CFG), toy_encode(text_b, CFG)):
                collisions += 1
        assert collisions <= 2

    def test_masked_cosine_strictly_below_one(self, rng):
        lex = Lexicon(entries=("frak", "smeg head"))
        for i in range(100):
            n = int(rng.integers(3, 25))
            words = [f"tok{int(rng.integers(0, 40))}" for _ in range(n)]
            words.insert(int(rng.integers(0, n)), "frak")
            text = " ".join(words)
            from cbdebias.lexicon import mask_text
            masked = mask_text(text, lex)
            v_clear = toy_encode(text, CFG)
            v_adv = toy_encode(masked, CFG)
            for layer in range(CFG.layers):
                cos = float(v_clear[layer] @ v_adv[layer])
                assert 0.0 < cos < 1.0


@pytest.fixture(scope="module")
def small_corpus():
    gcfg = GeneratorConfig(n_sessions=60, positive_ratio=0.3)
    corpus = [aggregate_and_clean(s)
              for s in generate_synthetic_corpus(gcfg, seed=2)]
    lexicon = Lexicon(entries=gcfg.lexicon_entries())
    return corpus, lexicon


class TestEncodeCorpus:
    def test_cardinality(self, small_corpus):
        corpus, lexicon = small_corpus
        es = encode_corpus(corpus, lexicon, CFG)
        assert len(es.records) == 2 * len(corpus)

    def test_no_swears_identical_variants(self, small_corpus):
        corpus, _ = small_corpus
        unrelated = Lexicon(entries=("zzzznotpresent",))
        es = encode_corpus(corpus, unrelated, CFG)
        for s in corpus:
            assert np.array_equal(es.vectors(s.id, "clear"),
                                  es.vectors(s.id, "adversarial"))

    def test_swear_sessions_have_positive_embedding_loss(self, small_corpus):
        corpus, lexicon = small_corpus
        from cbdebias.lexicon import find_matches
        es = encode_corpus(corpus, lexicon, CFG)
        checked = 0
        for s in corpus:
            if not find_matches(s.aggregated_text, lexicon):
                continue
            for layer in range(1, CFG.layers + 1):
                loss = embedding_loss(
                    es.vectors(s.id, "clear")[layer - 1][None, :],
                    es.vectors(s.id, "adversarial")[layer - 1][None, :])
                assert loss > 0.0
            checked += 1
        assert checked > 10

    def test_requires_aggregation(self, small_corpus):
        _, lexicon = small_corpus
        gcfg = GeneratorConfig(n_sessions=5, positive_ratio=0.4)
        raw = generate_synthetic_corpus(gcfg, seed=1)
        with pytest.raises(DataError, match="not aggregated"):
            encode_corpus(raw, lexicon, CFG)


class TestSyntheticEmbedding:
    def test_definition(self):
        out = synthetic_embedding(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        assert np.array_equal(out, np.array([0.5, 0.5]))

    def test_identity_when_equal(self, rng):
        v = rng.standard_normal(8)
        assert np.array_equal(synthetic_embedding(v, v), v)

    def test_not_renormalized(self):
        out = synthetic_embedding(np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
        assert np.array_equal(out, np.array([0.0, 0.0]))

    def test_against_independent_mean(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 10))
            a = rng.standard_normal(n)
            b = rng.standard_normal(n)
            got = synthetic_embedding(a, b)
            expected = np.array([(a[i] + b[i]) / 2.0 for i in range(n)])
            np.testing.assert_array_equal(got, expected)

    def test_dim_mismatch(self):
        with pytest.raises(DataError, match="mismatch"):
            synthetic_embedding(np.zeros(3), np.zeros(4))


class TestImportExport:
    @pytest.fixture()
    def embedding_set(self):
        gcfg = GeneratorConfig(n_sessions=10, positive_ratio=0.3)
        corpus = [aggregate_and_clean(s)
                  for s in generate_synthetic_corpus(gcfg, seed=4)]
        lexicon = Lexicon(entries=gcfg.lexicon_entries())
        return encode_corpus(corpus, lexicon, CFG)

    def test_round_trip_within_tolerance(self, tmp_path, embedding_set):
        path = tmp_path / "emb.jsonl"
        export_embeddings(embedding_set, path)
        loaded = import_embeddings(path)
        assert loaded.meta["dim"] == CFG.dim
        assert set(loaded.records) == set(embedding_set.records)
        for key, arr in embedding_set.records.items():
            np.testing.assert_allclose(loaded.records[key], arr, atol=1e-7)

    def test_export_deterministic_bytes(self, tmp_path, embedding_set):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        export_embeddings(embedding_set, a)
        export_embeddings(embedding_set, b)
        assert a.read_bytes() == b.read_bytes()

    def test_wrong_layer_count_names_id(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        vec = [1.0] + [0.0] * 7
        lines = [json.dumps({"dim": 8, "layers": 3, "encoder": "x", "seed": 0})]
        lines.append(json.dumps({"id": "ok", "variant": "clear",
                                 "layers": [vec, vec, vec]}))
        lines.append(json.dumps({"id": "short", "variant": "clear",
                                 "layers": [vec, vec]}))
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match="short"):
            import_embeddings(path)

    def test_unknown_variant_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        vec = [1.0, 0.0]
        lines = [json.dumps({"dim": 2, "layers": 1, "encoder": "x", "seed": 0}),
                 json.dumps({"id": "a", "variant": "noisy", "layers": [vec]})]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match="variant"):
            import_embeddings(path)

    def test_externally_written_fixture_digits(self, tmp_path):
        # hand-written file with known decimal values
        path = tmp_path / "fixture.jsonl"
        v1 = [0.6, 0.8]
        v2 = [0.28, 0.96]
        lines = [json.dumps({"dim": 2, "layers": 2, "encoder": "external", "seed": 9}),
                 json.dumps({"id": "x", "variant": "clear", "layers": [v1, v2]})]
        path.write_text("\n".join(lines) + "\n")
        loaded = import_embeddings(path)
        assert loaded.records[("x", "clear")][0].tolist() == [0.6, 0.8]
        assert loaded.records[("x", "clear")][1].tolist() == [0.28, 0.96]

    def test_norm_invariant_enforced(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        lines = [json.dumps({"dim": 2, "layers": 1, "encoder": "x", "seed": 0}),
                 json.dumps({"id": "a", "variant": "clear", "layers": [[2.0, 0.0]]})]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match="unit-normalized"):
            import_embeddings(path)
        loaded = import_embeddings(path, normalize=True)
        np.testing.assert_allclose(loaded.records[("a", "clear")][0], [1.0, 0.0])

    def test_layer_matrix_order_and_range(self, embedding_set):
        ids = embedding_set.ids()[:4]
        mat = embedding_set.layer_matrix(2, ids, "clear")
        assert mat.shape == (4, CFG.dim)
        np.testing.assert_array_equal(mat[1], embedding_set.vectors(ids[1], "clear")[1])
        with pytest.raises(DataError, match="out of range"):
            embedding_set.layer_matrix(CFG.layers + 1, ids, "clear")
