"""Deterministic per-layer text embeddings.

The built-in encoder is a feature-hashing random-projection network: token
and character n-gram features are hashed (FNV-1a 64-bit) into buckets, the
bucket rows of a fixed +-1/sqrt(dim) projection matrix are summed and
normalized, and each subsequent layer applies a seeded dense residual
tanh map followed by renormalization. Bit-stable for a fixed config.

Embeddings for externally produced encoders can be imported from the same
JSONL format the exporter writes.
"""

from __future__ import annotations

import functools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Session
from .errors import DataError, UsageError
from .lexicon import DEFAULT_MASK_TOKEN, Lexicon, mask_text, tokenize
from .seeding import derive_seed

logger = logging.getLogger(__name__)

VARIANTS = ("clear", "adversarial")
_NORM_TOL = 1e-6

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    """FNV-1a 64-bit hash."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _U64
    return h


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 64
    layers: int = 12
    vocab_buckets: int = 4096
    ngram_range: tuple[int, int] = (3, 5)
    seed: int = 0
    hash_name: str = "fnv1a-64"

    def __post_init__(self) -> None:
        if self.dim < 2:
            raise UsageError(f"encoder dim must be >= 2, got {self.dim}")
        if self.layers < 1:
            raise UsageError(f"encoder layers must be >= 1, got {self.layers}")
        if self.vocab_buckets < self.dim:
            raise UsageError("vocab_buckets must be >= dim")
        if self.hash_name != "fnv1a-64":
            raise UsageError(f"unsupported hash: {self.hash_name!r}")
        lo, hi = self.ngram_range
        if lo < 1 or hi < lo:
            raise UsageError(f"invalid ngram_range: {self.ngram_range}")

    def meta(self) -> dict:
        return {"dim": self.dim, "layers": self.layers,
                "encoder": f"toy-{self.hash_name}", "seed": self.seed}


@functools.lru_cache(maxsize=4)
def _encoder_weights(config: EncoderConfig) -> tuple[np.ndarray, tuple[np.ndarray, ...]]:
    rng = np.random.default_rng(derive_seed(config.seed, "encoder-weights"))
    scale = 1.0 / math.sqrt(config.dim)
    signs = rng.integers(0, 2, size=(config.vocab_buckets, config.dim)).astype(np.float64)
    projection = (signs * 2.0 - 1.0) * scale
    layer_mats = tuple(
        rng.standard_normal((config.dim, config.dim)) * scale
        for _ in range(config.layers)
    )
    # cached arrays are shared across callers
    projection.setflags(write=False)
    for mat in layer_mats:
        mat.setflags(write=False)
    return projection, layer_mats


def _feature_ids(text: str, config: EncoderConfig) -> list[int]:
    lo, hi = config.ngram_range
    ids: list[int] = []
    for token in tokenize(text):
        t = token.text.lower()
        ids.append(fnv1a_64(t.encode("utf-8")) % config.vocab_buckets)
        for n in range(lo, hi + 1):
            if len(t) < n:
                break
            for i in range(len(t) - n + 1):
                ids.append(fnv1a_64(t[i:i + n].encode("utf-8")) % config.vocab_buckets)
    return ids


def toy_encode(text: str, config: EncoderConfig) -> np.ndarray:
    """Encode text into (layers, dim) unit vectors, deterministically.

    An empty token stream yields the flagged sentinel: the unit vector
    along axis 0 fed through the layer recursion.
    """
    projection, layer_mats = _encoder_weights(config)
    ids = _feature_ids(text, config)
    if not ids:
        logger.warning("toy_encode: empty token stream, using sentinel vector")
        v = np.zeros(config.dim)
        v[0] = 1.0
    else:
        acc = np.sum(projection[ids], axis=0)
        norm = np.linalg.norm(acc)
        if norm == 0.0:
            logger.warning("toy_encode: features cancelled out, using sentinel vector")
            v = np.zeros(config.dim)
            v[0] = 1.0
        else:
            v = acc / norm
    out = np.empty((config.layers, config.dim))
    for l, mat in enumerate(layer_mats):
        v = np.tanh(mat @ v) + v
        v = v / np.linalg.norm(v)
        out[l] = v
    return out


@dataclass
class EmbeddingSet:
    """Per-session, per-variant, per-layer vectors plus encoder metadata.

    records maps (session_id, variant) to a (layers, dim) array; layer
    indices in the accessor API are 1-based.
    """

    meta: dict
    records: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return int(self.meta["dim"])

    @property
    def layers(self) -> int:
        return int(self.meta["layers"])

    def ids(self) -> list[str]:
        return sorted({sid for sid, _ in self.records})

    def vectors(self, session_id: str, variant: str) -> np.ndarray:
        try:
            return self.records[(session_id, variant)]
        except KeyError:
            raise DataError(f"no {variant} embedding for session {session_id!r}") from None

    def layer_matrix(self, layer: int, ids: list[str], variant: str) -> np.ndarray:
        """Stack one layer's vectors for the given ids, in order."""
        if not 1 <= layer <= self.layers:
            raise DataError(f"layer {layer} out of range 1..{self.layers}")
        if not ids:
            raise DataError("no session ids given")
        return np.stack([self.vectors(sid, variant)[layer - 1] for sid in ids])


def _validate_record(sid: str, arr: np.ndarray, layers: int, dim: int) -> None:
    if arr.shape != (layers, dim):
        raise DataError(
            f"session {sid!r}: expected {layers} layers x {dim} dims, got "
            f"shape {arr.shape}"
        )
    norms = np.linalg.norm(arr, axis=1)
    if np.any(norms <= 0.0) or np.any(norms > 1.0 + _NORM_TOL):
        raise DataError(f"session {sid!r}: vectors must be unit-normalized per layer")


def encode_corpus(sessions: list[Session], lexicon: Lexicon, config: EncoderConfig,
                  mask_token: str = DEFAULT_MASK_TOKEN) -> EmbeddingSet:
    """Encode every session twice: the aggregated text as-is (clear) and
    with all lexicon phrases masked (adversarial)."""
    records: dict[tuple[str, str], np.ndarray] = {}
    for s in sessions:
        if s.aggregated_text is None:
            raise DataError(f"session {s.id!r} not aggregated; run aggregate_and_clean first")
        records[(s.id, "clear")] = toy_encode(s.aggregated_text, config)
        masked = mask_text(s.aggregated_text, lexicon, mask_token)
        records[(s.id, "adversarial")] = toy_encode(masked, config)
    return EmbeddingSet(meta=config.meta(), records=records)


def synthetic_embedding(clear: np.ndarray, adversarial: np.ndarray) -> np.ndarray:
    """Elementwise mean of clear and adversarial vectors; not re-normalized."""
    clear = np.asarray(clear, dtype=np.float64)
    adversarial = np.asarray(adversarial, dtype=np.float64)
    if clear.shape != adversarial.shape:
        raise DataError(
            f"dim mismatch: clear {clear.shape} vs adversarial {adversarial.shape}"
        )
    return (clear + adversarial) / 2.0


def export_embeddings(embeddings: EmbeddingSet, path: str | Path) -> None:
    """Write the JSONL embedding format: a metadata line, then one record
    per (id, variant), sorted for byte-stable output."""
    path = Path(path)
    meta = embeddings.meta
    header = {"dim": int(meta["dim"]), "layers": int(meta["layers"]),
              "encoder": str(meta.get("encoder", "external")),
              "seed": int(meta.get("seed", 0))}
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for (sid, variant) in sorted(embeddings.records):
            arr = embeddings.records[(sid, variant)]
            obj = {"id": sid, "variant": variant,
                   "layers": [[float(x) for x in row] for row in arr]}
            fh.write(json.dumps(obj) + "\n")


def import_embeddings(path: str | Path, normalize: bool = False) -> EmbeddingSet:
    """Read the JSONL embedding format back into an EmbeddingSet.

    With normalize=True each layer vector is renormalized to unit length,
    which accommodates dumps from external encoders; otherwise vectors must
    already satisfy the unit-norm invariant.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"unreadable embeddings file {path}: {exc}") from exc
    if not lines:
        raise DataError(f"empty embeddings file: {path}")
    try:
        meta = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path.name} line 1: invalid metadata: {exc}") from exc
    if not isinstance(meta, dict) or "dim" not in meta or "layers" not in meta:
        raise DataError(f"{path.name} line 1: metadata must define dim and layers")
    layers = int(meta["layers"])
    dim = int(meta["dim"])

    records: dict[tuple[str, str], np.ndarray] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        where = f"{path.name} line {lineno}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{where}: invalid JSON: {exc}") from exc
        sid = obj.get("id")
        variant = obj.get("variant")
        if not isinstance(sid, str) or not sid:
            raise DataError(f"{where}: missing id")
        if variant not in VARIANTS:
            raise DataError(f"{where}: unknown variant {variant!r} for id {sid!r}")
        if (sid, variant) in records:
            raise DataError(f"{where}: duplicate record for ({sid!r}, {variant!r})")
        try:
            arr = np.asarray(obj["layers"], dtype=np.float64)
        except (KeyError, ValueError) as exc:
            raise DataError(f"{where}: bad layers payload for id {sid!r}: {exc}") from exc
        if arr.ndim != 2 or arr.shape != (layers, dim):
            raise DataError(
                f"{where}: id {sid!r} has shape {arr.shape}, expected ({layers}, {dim})"
            )
        if normalize:
            norms = np.linalg.norm(arr, axis=1, keepdims=True)
            if np.any(norms == 0.0):
                raise DataError(f"{where}: id {sid!r} has a zero vector")
            arr = arr / norms
        _validate_record(sid, arr, layers, dim)
        records[(sid, variant)] = arr
    if not records:
        raise DataError(f"{path.name}: no embedding records")
    return EmbeddingSet(meta={"dim": dim, "layers": layers,
                              "encoder": str(meta.get("encoder", "external")),
                              "seed": int(meta.get("seed", 0))},
                        records=records)
