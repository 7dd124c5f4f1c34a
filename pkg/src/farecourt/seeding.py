"""Labeled seed derivation so every random procedure traces back to one root seed."""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def derive_seed(root: int, *labels: object) -> int:
    """Stable 64-bit child seed for ``root`` and a path of labels."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root) & MASK64).encode())
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "big")


def rng_for(seed: int, *labels: object) -> np.random.Generator:
    if labels:
        seed = derive_seed(seed, *labels)
    return np.random.default_rng(int(seed) & MASK64)
