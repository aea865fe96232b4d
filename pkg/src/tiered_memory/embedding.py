"""Embedders mapping text to L2-normalized vectors."""

from __future__ import annotations

import hashlib
from typing import Protocol

import numpy as np

from .tokens import words


class Embedder(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


class HashedEmbedder:
    """Hashed bag-of-words: each token lands in one of ``dimension`` buckets.

    Deterministic across processes (blake2b, not ``hash()``). Text with no
    tokens embeds to the zero vector.
    """

    def __init__(self, dimension: int = 256) -> None:
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension

    def bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dimension

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        for tok in words(text):
            vec[self.bucket(tok)] += 1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec
