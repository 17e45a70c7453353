"""Pinned PRNG primitives: splitmix64 and FNV-1a, for cross-platform shuffles.

Python's random module does not promise a stable shuffle across versions, so
split generation uses its own fixed generator.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

FNV_OFFSET_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: str | bytes) -> int:
    """64-bit FNV-1a hash of a string (UTF-8) or byte sequence."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV_OFFSET_BASIS
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


class SplitMix64:
    """splitmix64 sequence generator; identical output on every platform."""

    def __init__(self, seed: int) -> None:
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next_u64() % n

    def next_unit(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53


def splitmix64_array(seed: int, count: int) -> np.ndarray:
    """Vectorized splitmix64: the first `count` outputs for `seed` as uint64."""
    with np.errstate(over="ignore"):
        state = np.uint64(seed) + np.arange(1, count + 1, dtype=np.uint64) * np.uint64(_GOLDEN)
        z = state
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


def uniform_array(seed: int, count: int) -> np.ndarray:
    """Vectorized uniform [0, 1) floats from the splitmix64 stream."""
    return (splitmix64_array(seed, count) >> np.uint64(11)) * 2.0**-53


def shuffled(items: list, rng: SplitMix64) -> list:
    """Fisher-Yates shuffle (backward variant) driven by `rng`; returns a copy."""
    out = list(items)
    for i in range(len(out) - 1, 0, -1):
        j = rng.next_below(i + 1)
        out[i], out[j] = out[j], out[i]
    return out
