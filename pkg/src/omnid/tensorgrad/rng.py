"""Named counter-based random number generation.

Every draw hashes (key, counter) through a SplitMix64 finalizer, so streams
are reproducible bit-for-bit across platforms and independent of draw order
within other streams.  Gaussians come from the Box-Muller transform.
"""

from __future__ import annotations

import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)


def _finalize(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def _fnv1a(label: str) -> np.uint64:
    h = _FNV_OFFSET
    with np.errstate(over="ignore"):
        for byte in label.encode("utf-8"):
            h = (h ^ np.uint64(byte)) * _FNV_PRIME
    return h


class CounterRng:
    """Deterministic stream of random numbers keyed by (seed, stream name)."""

    def __init__(self, seed: int, _key: np.uint64 | None = None):
        self.seed = int(seed)
        if _key is None:
            with np.errstate(over="ignore"):
                self.key = _finalize(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * _GOLDEN + _GOLDEN)
        else:
            self.key = np.uint64(_key)
        self.counter = 0

    def split(self, label: str | int) -> "CounterRng":
        """Derive an independent named child stream; the parent is untouched."""
        with np.errstate(over="ignore"):
            tag = _fnv1a(label) if isinstance(label, str) \
                else np.uint64(int(label) & 0xFFFFFFFFFFFFFFFF) * _GOLDEN
        return CounterRng(self.seed, _key=_finalize(self.key ^ tag))

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _finalize(self.key + (idx + np.uint64(1)) * _GOLDEN)

    def uniform(self, shape=(), dtype=np.float64) -> np.ndarray:
        """Uniform draws in [0, 1) with 53-bit mantissas."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        out = u.reshape(shape).astype(dtype)
        return out if shape else out.reshape(())

    def normal(self, shape=(), dtype=np.float64) -> np.ndarray:
        """Standard Gaussian draws via Box-Muller on consecutive uniform pairs."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        u1 = 1.0 - self.uniform(pairs)  # in (0, 1]; log stays finite
        u2 = self.uniform(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        out = z.reshape(shape).astype(dtype)
        return out if shape else out.reshape(())

    def integers(self, upper: int, shape=()) -> np.ndarray:
        """Uniform integers in [0, upper)."""
        if upper <= 0:
            raise ValueError(f"upper bound must be positive, got {upper}")
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        out = np.floor(self.uniform(shape if shape else (1,)) * upper).astype(np.int64)
        out = np.minimum(out, upper - 1)
        return out.reshape(shape) if shape else int(out[0])

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        perm = np.arange(n)
        if n < 2:
            return perm
        draws = self.uniform((n - 1,))
        for i in range(n - 1, 0, -1):
            j = min(int(draws[n - 1 - i] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm
