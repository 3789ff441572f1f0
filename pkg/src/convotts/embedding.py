"""Deterministic text embedders used for caption conditioning and similarity.

The default embedder is a hashing trick: every lowercased whitespace token is
assigned a fixed Gaussian vector seeded from its SHA-256 digest; a text embeds
as the L2-normalized sum of its token vectors. It is deliberately simple,
fully reproducible across processes, and pluggable so a real sentence encoder
can replace it behind the same callable interface.
"""

from __future__ import annotations

import hashlib

import numpy as np


class HashingTextEmbedder:
    """Callable mapping text -> unit-norm float64 vector of fixed dim."""

    def __init__(self, dim: int = 256):
        if dim < 2:
            raise ValueError(f"dim must be >= 2, got {dim}")
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            seed = int.from_bytes(digest[:8], "little")
            vec = np.random.default_rng(seed).standard_normal(self.dim)
            self._cache[token] = vec
        return vec

    def __call__(self, text: str) -> np.ndarray:
        tokens = text.lower().split()
        if not tokens:
            tokens = ["<empty>"]
        acc = np.zeros(self.dim)
        for tok in tokens:
            acc += self._token_vector(tok)
        norm = np.linalg.norm(acc)
        if norm < 1e-12:
            # astronomically unlikely with Gaussian vectors; keep determinism anyway
            acc = self._token_vector("<degenerate>")
            norm = np.linalg.norm(acc)
        return acc / norm
