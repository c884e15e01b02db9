"""Portable pseudo-random streams.

Every random draw in the package (weight init, shuffles, split selection,
synthetic data) comes from SplitMix64 so that a given seed produces the
same numbers on any platform and in any language that implements the
same generator.

The generator is used in counter mode: output ``i`` (1-based) of a stream
with state ``s`` is ``mix(s + i * GOLDEN)``, which is exactly the sequence
the sequential SplitMix64 produces.  Doubles take the top 53 bits.
Permutations are obtained by sorting uniform keys (stable sort, so ties
fall back to index order).
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def _tag_value(tag: int | str) -> int:
    if isinstance(tag, str):
        return int.from_bytes(hashlib.sha256(tag.encode()).digest()[:8], "little")
    return int(tag) & MASK64


def derive_seed(seed: int, *tags: int | str) -> int:
    """Deterministically derive an independent 64-bit seed from ``seed`` and tags."""
    h = mix64(int(seed) & MASK64)
    for tag in tags:
        h = mix64((h ^ _tag_value(tag)) + GOLDEN)
    return h


class SplitMix64:
    """Seeded SplitMix64 stream with vectorized draws."""

    def __init__(self, seed: int, *tags: int | str) -> None:
        self.state = derive_seed(seed, *tags) if tags else int(seed) & MASK64

    def next_u64(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError(f"n must be >= 0, got {n}")
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN)
            out = _mix64_array(z)
        self.state = (self.state + n * GOLDEN) & MASK64
        return out

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1)."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        """``n`` standard normal draws (Box-Muller, cosine branch only)."""
        u = self.uniform(2 * n)
        u1 = 1.0 - u[:n]  # (0, 1]
        u2 = u[n:]
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``, in draw order."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot choose {k} of {n}")
        return self.permutation(n)[:k]
