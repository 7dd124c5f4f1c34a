"""Text embedders. Anything with ``name``, ``dimension`` and ``embed(text)`` returning a unit vector works."""

from __future__ import annotations

import hashlib
import re
from typing import Protocol, runtime_checkable

import numpy as np

_TOKEN = re.compile(r"\w+", re.UNICODE)


@runtime_checkable
class Embedder(Protocol):
    name: str
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


class HashingEmbedder:
    """Signed feature hashing of lowercase word unigrams and bigrams, L2-normalized."""

    def __init__(self, dimension: int = 256):
        if dimension < 2:
            raise ValueError("dimension must be >= 2")
        self.dimension = dimension
        self.name = f"hashing-{dimension}"

    def _slot(self, token: str) -> tuple[int, float]:
        h = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "big")
        return h % self.dimension, 1.0 if (h >> 63) & 1 else -1.0

    def embed(self, text: str) -> np.ndarray:
        tokens = _TOKEN.findall(text.lower()) or ["<empty>"]
        grams = tokens + [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]
        v = np.zeros(self.dimension)
        for g in grams:
            i, s = self._slot(g)
            v[i] += s
        norm = np.linalg.norm(v)
        if norm == 0:
            # all hashed contributions cancelled; fall back to a fixed slot
            i, _ = self._slot("<cancelled>")
            v[i] = 1.0
            return v
        return v / norm


def embedder_from_tag(tag: str) -> Embedder:
    kind, _, dim = tag.partition("-")
    if kind == "hashing":
        return HashingEmbedder(int(dim or 256))
    raise ValueError(f"unknown embedder tag {tag!r}")
