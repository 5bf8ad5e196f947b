import logging

import numpy as np
import pytest

from cbdebias.corpus import (
    GeneratorConfig,
    PlantedPhrase,
    aggregate_and_clean,
    generate_synthetic_corpus,
    split_folds,
)
from cbdebias.encode import EncoderConfig, encode_corpus
from cbdebias.lexicon import Lexicon, find_matches

logging.getLogger("cbdebias").setLevel(logging.ERROR)


def make_planted_setup(seed, n_sessions=500, bearers=150, negative_skew=0.9,
                       repeats=4, signal_strength=0.4, dim=64, layers=12,
                       vocab_buckets=2048):
    """Planted-bias corpus + embeddings + split, as used by the debiasing
    experiments: one multi-word phrase whose bearers are mostly
    gold-negative, generic swears in ~98% of sessions of both classes."""
    gcfg = GeneratorConfig(
        n_sessions=n_sessions, positive_ratio=0.3,
        swear_rate_positive=0.98, swear_rate_negative=0.98,
        signal_strength=signal_strength,
        planted=(PlantedPhrase("blarp snek", bearers, negative_skew, repeats),),
    )
    corpus = [aggregate_and_clean(s)
              for s in generate_synthetic_corpus(gcfg, seed=seed)]
    lexicon = Lexicon(entries=gcfg.lexicon_entries())
    ecfg = EncoderConfig(dim=dim, layers=layers, vocab_buckets=vocab_buckets,
                         seed=seed)
    embeddings = encode_corpus(corpus, lexicon, ecfg)
    labels = {s.id: s.label for s in corpus}
    swears = {
        s.id: tuple(sorted({m.phrase
                            for m in find_matches(s.aggregated_text, lexicon)}))
        for s in corpus
    }
    fold = split_folds(corpus, k=1, seed=seed)[0]
    split = (sorted(fold.train_ids), sorted(fold.validation_ids),
             sorted(fold.test_ids))
    return {"corpus": corpus, "lexicon": lexicon, "gcfg": gcfg,
            "embeddings": embeddings, "labels": labels, "swears": swears,
            "split": split}


@pytest.fixture(scope="session")
def planted_setup():
    """Factory fixture, cached per seed/kwargs across the test session."""
    cache = {}

    def factory(seed, **kwargs):
        key = (seed, tuple(sorted(kwargs.items())))
        if key not in cache:
            cache[key] = make_planted_setup(seed, **kwargs)
        return cache[key]

    return factory


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
