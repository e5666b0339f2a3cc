"""Deterministic seed derivation for independent RNG streams."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(base_seed: int, *tags: str | int) -> int:
    """Derive an independent 63-bit seed from a base seed and a tag path.

    Stable across processes and platforms (sha256 of the canonical tag
    string), so every stage of a run can own its RNG stream without the
    streams interfering or depending on call order.
    """
    key = ":".join([str(int(base_seed))] + [str(t) for t in tags])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def rng_for(base_seed: int, *tags: str | int) -> np.random.Generator:
    """A numpy Generator seeded from ``derive_seed(base_seed, *tags)``."""
    return np.random.default_rng(derive_seed(base_seed, *tags))
