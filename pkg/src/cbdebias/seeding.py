"""Deterministic sub-seed derivation.

Every random stage (fold shuffles, encoder matrices, weight init, batch
order) draws its own seed from one run-level seed plus a stage tag, so
stages are reproducible in isolation and independent of each other.
"""

import hashlib


def derive_seed(seed: int, tag: str) -> int:
    """Derive a 64-bit stage seed from a run seed and a stage tag."""
    digest = hashlib.sha256(f"{seed}:{tag}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
