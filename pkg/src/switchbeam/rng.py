"""Seedable 64-bit random number generator.

Every stochastic operation in the package draws from an explicitly seeded
:class:`SplitMix64` stream, so identical seeds give bit-identical results on
any platform. The core update is the splitmix64 recurrence (Steele, Lea and
Flood's SplittableRandom finalizer):

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    output = z ^ (z >> 31)

Derived draws are built only from ``next_u64``: doubles take the top 53 bits,
normals come from Box-Muller, bounded integers use rejection sampling, and
shuffling is Fisher-Yates. None of these touch numpy's global RNG.
"""

from __future__ import annotations

import math
from typing import MutableSequence

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class SplitMix64:
    """Deterministic splitmix64 stream seeded by a 64-bit integer."""

    def __init__(self, seed: int):
        self._state = int(seed) & _MASK64
        self._spare_normal: float | None = None

    def next_u64(self) -> int:
        """Return the next raw 64-bit output."""
        self._state = (self._state + _GAMMA) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        """Uniform double in [low, high) using the top 53 bits."""
        u = (self.next_u64() >> 11) * 2.0 ** -53
        return low + (high - low) * u

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        """Standard-normal draw via Box-Muller, scaled to (mean, std)."""
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return mean + std * z
        # u1 in (0, 1] so the log never sees 0
        u1 = ((self.next_u64() >> 11) + 1) * 2.0 ** -53
        u2 = (self.next_u64() >> 11) * 2.0 ** -53
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._spare_normal = r * math.sin(theta)
        return mean + std * r * math.cos(theta)

    def normals(self, count: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        return np.array([self.normal(mean, std) for _ in range(count)])

    def uniforms(self, count: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return np.array([self.uniform(low, high) for _ in range(count)])

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError(f"bound must be positive, got {n}")
        limit = (_MASK64 + 1) - ((_MASK64 + 1) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n

    def shuffle(self, seq: MutableSequence) -> None:
        """In-place Fisher-Yates shuffle, from the last element down."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.below(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def spawn(self) -> "SplitMix64":
        """Child stream seeded from this stream (advances this stream once)."""
        return SplitMix64(self.next_u64())
