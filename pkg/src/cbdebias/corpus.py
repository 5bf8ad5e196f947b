"""Session dataset schema, cleaning, fold splits, swear-distribution stats,
and a planted-bias synthetic corpus generator.

Datasets are JSONL files, one session per line:

    {"id": str, "platform": str, "label": 0|1,
     "comments": [{"user": str, "text": str, "ts": int?}]}
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError
from .lexicon import Lexicon, find_matches
from .seeding import derive_seed

DEFAULT_MAX_TOKENS = 512

_URL_RE = re.compile(r"(?:https?://|www\.)\S+")
_MENTION_RE = re.compile(r"@\w+")


@dataclass(frozen=True)
class Comment:
    user_id: str
    text: str
    timestamp: int | None = None


@dataclass(frozen=True)
class Session:
    """One social-media session: an ordered comment thread with a binary label."""

    id: str
    platform: str
    comments: tuple[Comment, ...]
    label: int
    aggregated_text: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise DataError("session id must be non-empty")
        if not self.comments:
            raise DataError(f"session {self.id!r} has no comments")
        if self.label not in (0, 1):
            raise DataError(f"session {self.id!r} label must be 0 or 1, got {self.label!r}")
        for c in self.comments:
            if not c.user_id:
                raise DataError(f"session {self.id!r} has a comment with empty user_id")


@dataclass(frozen=True)
class FoldSplit:
    """One independent train/validation/test split of the session ids."""

    fold_index: int
    train_ids: frozenset[str]
    validation_ids: frozenset[str]
    test_ids: frozenset[str]
    seed: int


@dataclass(frozen=True)
class DistributionStats:
    """Session-level swear-word distribution. None marks an undefined rate
    (empty conditioning set)."""

    p_c: float
    p_nc: float
    p_s_given_c: float | None
    p_s_given_nc: float | None
    p_c_given_s: float | None
    p_nc_given_s: float | None
    n_sessions: int
    n_swear_sessions: int

    FIELD_ORDER = ("p_c", "p_nc", "p_s_given_c", "p_s_given_nc", "p_c_given_s", "p_nc_given_s")

    def undefined_fields(self) -> tuple[str, ...]:
        return tuple(name for name in self.FIELD_ORDER if getattr(self, name) is None)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def clean_text(text: str) -> str:
    """Lowercase, replace URLs with <url> and @-mentions with <user>,
    collapse whitespace. Idempotent."""
    t = text.lower()
    t = _URL_RE.sub("<url>", t)
    t = _MENTION_RE.sub("<user>", t)
    return " ".join(t.split())


def aggregate_and_clean(session: Session, max_tokens: int = DEFAULT_MAX_TOKENS) -> Session:
    """Concatenate comments in order, clean, and truncate to max_tokens
    whitespace tokens. Returns a new Session with aggregated_text set."""
    if max_tokens < 1:
        raise DataError(f"max_tokens must be >= 1, got {max_tokens}")
    joined = " ".join(c.text for c in session.comments)
    cleaned = clean_text(joined)
    tokens = cleaned.split()
    text = " ".join(tokens[:max_tokens])
    return replace(session, aggregated_text=text)


def _session_from_obj(obj: object, where: str) -> Session:
    if not isinstance(obj, dict):
        raise DataError(f"{where}: record must be a JSON object")
    try:
        sid = obj["id"]
        platform = obj.get("platform", "")
        label = obj["label"]
        raw_comments = obj["comments"]
    except KeyError as exc:
        raise DataError(f"{where}: missing field {exc.args[0]!r}") from exc
    if not isinstance(sid, str):
        raise DataError(f"{where}: id must be a string")
    if not isinstance(label, int) or isinstance(label, bool) or label not in (0, 1):
        raise DataError(f"{where}: label must be 0 or 1, got {label!r}")
    if not isinstance(raw_comments, list) or not raw_comments:
        raise DataError(f"{where}: comments must be a non-empty list")
    comments = []
    for k, rc in enumerate(raw_comments):
        if not isinstance(rc, dict) or "user" not in rc or "text" not in rc:
            raise DataError(f"{where}: comment {k} must have 'user' and 'text'")
        ts = rc.get("ts")
        if ts is not None and (not isinstance(ts, int) or isinstance(ts, bool)):
            raise DataError(f"{where}: comment {k} 'ts' must be an integer")
        comments.append(Comment(user_id=str(rc["user"]), text=str(rc["text"]), timestamp=ts))
    try:
        return Session(id=sid, platform=str(platform), comments=tuple(comments), label=label)
    except DataError as exc:
        raise DataError(f"{where}: {exc}") from exc


def load_dataset(path: str | Path) -> list[Session]:
    """Load a JSONL session dataset, validating every record.

    Errors report the 1-based line number; duplicate ids are rejected.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"unreadable dataset file {path}: {exc}") from exc
    sessions: list[Session] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        where = f"{path.name} line {lineno}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{where}: invalid JSON: {exc}") from exc
        session = _session_from_obj(obj, where)
        if session.id in seen:
            raise DataError(f"{where}: duplicate session id {session.id!r}")
        seen.add(session.id)
        sessions.append(session)
    if not sessions:
        raise DataError(f"empty dataset: {path}")
    return sessions


def save_dataset(sessions: list[Session], path: str | Path) -> None:
    """Write sessions as JSONL in the load_dataset schema.

    aggregated_text is derived and never serialized.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for s in sessions:
            comments = []
            for c in s.comments:
                obj: dict = {"user": c.user_id, "text": c.text}
                if c.timestamp is not None:
                    obj["ts"] = c.timestamp
                comments.append(obj)
            record = {"id": s.id, "platform": s.platform, "label": s.label,
                      "comments": comments}
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def _stratified_pick(ids_by_class: dict[int, list[str]], ratio: float,
                     rng: np.random.Generator) -> tuple[list[str], list[str]]:
    """Shuffle each class and carve off `ratio` of it. Returns (picked, rest)."""
    picked: list[str] = []
    rest: list[str] = []
    for label in sorted(ids_by_class):
        ids = list(ids_by_class[label])
        order = rng.permutation(len(ids))
        shuffled = [ids[i] for i in order]
        k = _round_half_up(ratio * len(shuffled))
        picked.extend(shuffled[:k])
        rest.extend(shuffled[k:])
    return picked, rest


def split_train_val(sessions: list[Session], val_ratio: float, seed: int,
                    ) -> tuple[frozenset[str], frozenset[str]]:
    """Stratified split of all sessions into (train_ids, validation_ids)."""
    by_class: dict[int, list[str]] = {0: [], 1: []}
    for s in sessions:
        by_class[s.label].append(s.id)
    rng = np.random.default_rng(derive_seed(seed, "train-val"))
    val, train = _stratified_pick(by_class, val_ratio, rng)
    return frozenset(train), frozenset(val)


def split_folds(sessions: list[Session], k: int = 5, test_ratio: float = 0.2,
                val_ratio_of_train: float = 0.2, seed: int = 0) -> list[FoldSplit]:
    """Produce k independent stratified shuffles, each split into
    train/validation/test (default 64/16/20 percent overall).

    Deterministic for a fixed seed; every split partitions the id set.
    """
    if len(sessions) < k:
        raise DataError(f"dataset too small: {len(sessions)} sessions for k={k}")
    by_class: dict[int, list[str]] = {0: [], 1: []}
    for s in sessions:
        by_class[s.label].append(s.id)
    folds: list[FoldSplit] = []
    for fold in range(k):
        rng = np.random.default_rng(derive_seed(seed, f"fold:{fold}"))
        test, remainder_ids = _stratified_pick(by_class, test_ratio, rng)
        remainder: dict[int, list[str]] = {0: [], 1: []}
        label_of = {sid: lab for lab, ids in by_class.items() for sid in ids}
        for sid in remainder_ids:
            remainder[label_of[sid]].append(sid)
        val, train = _stratified_pick(remainder, val_ratio_of_train, rng)
        folds.append(FoldSplit(
            fold_index=fold,
            train_ids=frozenset(train),
            validation_ids=frozenset(val),
            test_ids=frozenset(test),
            seed=seed,
        ))
    return folds


def distribution_stats(sessions: list[Session], lexicon: Lexicon) -> DistributionStats:
    """Session-level probabilities of cyberbullying and swear presence.

    A session "contains S" iff find_matches on its aggregated text is
    non-empty. Sessions without aggregated_text are aggregated on the fly
    with the default token cap.
    """
    if not sessions:
        raise DataError("empty dataset")
    n = len(sessions)
    n_c = 0
    n_s = 0
    n_s_c = 0
    n_s_nc = 0
    for s in sessions:
        text = s.aggregated_text
        if text is None:
            text = aggregate_and_clean(s).aggregated_text or ""
        has_s = bool(find_matches(text, lexicon))
        if s.label == 1:
            n_c += 1
            if has_s:
                n_s_c += 1
        elif has_s:
            n_s_nc += 1
        if has_s:
            n_s += 1
    n_nc = n - n_c
    return DistributionStats(
        p_c=n_c / n,
        p_nc=n_nc / n,
        p_s_given_c=(n_s_c / n_c) if n_c else None,
        p_s_given_nc=(n_s_nc / n_nc) if n_nc else None,
        p_c_given_s=(n_s_c / n_s) if n_s else None,
        p_nc_given_s=(n_s_nc / n_s) if n_s else None,
        n_sessions=n,
        n_swear_sessions=n_s,
    )


# --- synthetic corpus generation ---

DEFAULT_SWEAR_WORDS = ("frak", "smeg", "gorram", "felgercarb", "shazbot", "zark")


@dataclass(frozen=True)
class PlantedPhrase:
    """A bias-inducing phrase injected with a controlled class skew.

    negative_skew is the fraction of its bearer sessions with label 0;
    repeats controls how many copies each bearer gets, making the phrase
    more or less dominant in the session.
    """

    phrase: str
    bearers: int
    negative_skew: float
    repeats: int = 1


@dataclass(frozen=True)
class GeneratorConfig:
    n_sessions: int
    positive_ratio: float
    swear_rate_positive: float = 0.98
    swear_rate_negative: float = 0.98
    vocab_size: int = 300
    swear_words: tuple[str, ...] = DEFAULT_SWEAR_WORDS
    planted: tuple[PlantedPhrase, ...] = ()
    comments_per_session: tuple[int, int] = (2, 5)
    tokens_per_comment: tuple[int, int] = (4, 10)
    signal_strength: float = 0.6

    def lexicon_entries(self) -> tuple[str, ...]:
        """All swear phrases the generated corpus can contain."""
        return self.swear_words + tuple(p.phrase for p in self.planted)

    @staticmethod
    def from_dict(obj: dict) -> "GeneratorConfig":
        planted = tuple(
            PlantedPhrase(phrase=p["phrase"], bearers=int(p["bearers"]),
                          negative_skew=float(p["negative_skew"]),
                          repeats=int(p.get("repeats", 1)))
            for p in obj.get("planted", ())
        )
        kwargs = {k: obj[k] for k in (
            "n_sessions", "positive_ratio", "swear_rate_positive",
            "swear_rate_negative", "vocab_size", "signal_strength",
        ) if k in obj}
        if "swear_words" in obj:
            kwargs["swear_words"] = tuple(obj["swear_words"])
        if "comments_per_session" in obj:
            kwargs["comments_per_session"] = tuple(obj["comments_per_session"])
        if "tokens_per_comment" in obj:
            kwargs["tokens_per_comment"] = tuple(obj["tokens_per_comment"])
        return GeneratorConfig(planted=planted, **kwargs)


def load_generator_config(path: str | Path) -> GeneratorConfig:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"unreadable generator config {path}: {exc}") from exc
    try:
        return GeneratorConfig.from_dict(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"invalid generator config {path}: {exc}") from exc


def _validate_generator_config(config: GeneratorConfig) -> None:
    if config.n_sessions <= 0:
        raise DataError(f"n_sessions must be positive, got {config.n_sessions}")
    for name in ("positive_ratio", "swear_rate_positive", "swear_rate_negative",
                 "signal_strength"):
        v = getattr(config, name)
        if not 0.0 <= v <= 1.0:
            raise DataError(f"{name} must be in [0,1], got {v}")
    if config.vocab_size < 30:
        raise DataError(f"vocab_size must be >= 30, got {config.vocab_size}")
    if config.comments_per_session[0] < 1:
        raise DataError("comments_per_session lower bound must be >= 1")
    for p in config.planted:
        if not 0.0 <= p.negative_skew <= 1.0:
            raise DataError(f"planted phrase {p.phrase!r}: negative_skew out of [0,1]")
        if p.bearers < 1:
            raise DataError(f"planted phrase {p.phrase!r}: bearers must be >= 1")


def generate_synthetic_corpus(config: GeneratorConfig, seed: int = 0) -> list[Session]:
    """Generate a deterministic corpus with controlled class ratio, swear
    rates, and planted bias phrases.

    Content vocabulary is split into shared, positive-leaning, and
    negative-leaning words so the label is learnable; swear words and
    planted phrases are injected on top with exact per-class counts.
    Raises DataError if a planted phrase needs more sessions of one class
    than the config allots.
    """
    _validate_generator_config(config)
    n = config.n_sessions
    rng = np.random.default_rng(derive_seed(seed, "synthetic-corpus"))

    n_pos = _round_half_up(config.positive_ratio * n)
    labels = np.zeros(n, dtype=int)
    labels[:n_pos] = 1
    labels = labels[rng.permutation(n)]

    vocab = [f"w{i:04d}" for i in range(config.vocab_size)]
    n_shared = max(1, int(config.vocab_size * 0.7))
    n_side = max(1, (config.vocab_size - n_shared) // 2)
    shared = vocab[:n_shared]
    pos_words = vocab[n_shared:n_shared + n_side]
    neg_words = vocab[n_shared + n_side:n_shared + 2 * n_side]

    lo_c, hi_c = config.comments_per_session
    lo_t, hi_t = config.tokens_per_comment
    sessions_tokens: list[list[list[str]]] = []
    for i in range(n):
        side = pos_words if labels[i] == 1 else neg_words
        n_comments = int(rng.integers(lo_c, hi_c + 1))
        comments = []
        for _ in range(n_comments):
            n_tok = int(rng.integers(lo_t, hi_t + 1))
            toks = []
            for _ in range(n_tok):
                pool = side if rng.random() < config.signal_strength else shared
                toks.append(pool[int(rng.integers(0, len(pool)))])
            comments.append(toks)
        sessions_tokens.append(comments)

    def inject(session_idx: int, words: list[str]) -> None:
        comments = sessions_tokens[session_idx]
        c = int(rng.integers(0, len(comments)))
        pos = int(rng.integers(0, len(comments[c]) + 1))
        comments[c][pos:pos] = words

    pos_idx = np.flatnonzero(labels == 1)
    neg_idx = np.flatnonzero(labels == 0)

    for idx_pool, rate in ((pos_idx, config.swear_rate_positive),
                           (neg_idx, config.swear_rate_negative)):
        count = _round_half_up(rate * len(idx_pool))
        chosen = rng.choice(idx_pool, size=count, replace=False) if count else []
        for i in chosen:
            for _ in range(int(rng.integers(1, 4))):
                word = config.swear_words[int(rng.integers(0, len(config.swear_words)))]
                inject(int(i), [word])

    for planted in config.planted:
        m_neg = _round_half_up(planted.bearers * planted.negative_skew)
        m_pos = planted.bearers - m_neg
        if m_neg > len(neg_idx) or m_pos > len(pos_idx):
            raise DataError(
                f"infeasible planted phrase {planted.phrase!r}: needs "
                f"{m_neg} negative / {m_pos} positive sessions, corpus has "
                f"{len(neg_idx)} / {len(pos_idx)}"
            )
        words = planted.phrase.split()
        for i in rng.choice(neg_idx, size=m_neg, replace=False):
            for _ in range(planted.repeats):
                inject(int(i), list(words))
        for i in rng.choice(pos_idx, size=m_pos, replace=False):
            for _ in range(planted.repeats):
                inject(int(i), list(words))

    sessions: list[Session] = []
    for i in range(n):
        comments = tuple(
            Comment(user_id=f"u{int(rng.integers(0, max(10, n // 2))):04d}",
                    text=" ".join(toks), timestamp=i * 100 + j)
            for j, toks in enumerate(sessions_tokens[i])
        )
        sessions.append(Session(
            id=f"syn-{i:05d}", platform="synthetic", comments=comments,
            label=int(labels[i]),
        ))
    return sessions
