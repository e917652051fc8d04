"""Deterministic random streams keyed by integers.

Every random decision in the toolkit draws from a stream derived from
(seed, *keys). Because a stream depends only on its key path and never on
call order, results are identical across runs and across any parallel
schedule.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the given seed and key path."""
    ss = np.random.SeedSequence(
        entropy=seed & _MASK64, spawn_key=tuple(k & _MASK64 for k in keys)
    )
    return np.random.default_rng(ss)


def stable_hash64(text: str) -> int:
    """Platform-stable 64-bit hash of a string (used for sample ids)."""
    digest = hashlib.blake2s(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")
