"""Deterministic numeric substrate: seeded RNG, stable argsort, checked matmul.

Matrices are plain 2-D ``float64`` numpy arrays.
"""
from __future__ import annotations

import numpy as np

from .errors import NonFinite, ShapeMismatch


class Rng:
    """Seeded PCG64 stream.

    PCG64 and numpy's normal sampler are platform independent, so equal seeds
    give byte-identical streams everywhere.
    """

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, size, mean=0.0, std=1.0) -> np.ndarray:
        return self._gen.normal(mean, std, size=size)

    def uniform(self, size, low=0.0, high=1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int) -> np.ndarray:
        """``size`` distinct indices from ``range(n)``."""
        return self._gen.choice(n, size=size, replace=False)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def spawn(self, key: int) -> "Rng":
        """Child stream derived from (seed, key) only, independent of draws so far."""
        ss = np.random.SeedSequence([self.seed, int(key)])
        return Rng(int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)))


def gauss(rng: Rng, n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    if std < 0:
        raise ValueError("std must be >= 0")
    if n == 0:
        return np.empty(0)
    if std == 0:
        return np.full(n, float(mean))
    return rng.normal(n, mean, std)


def argsort_ascending(values) -> np.ndarray:
    """Stable ascending argsort; equal values keep their original index order."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("values must be a nonempty 1-D vector")
    if not np.all(np.isfinite(v)):
        raise NonFinite("argsort_ascending got NaN/Inf")
    return np.argsort(v, kind="stable")


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NonFinite("matmul produced NaN/Inf")
    return out
