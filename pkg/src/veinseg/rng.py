"""Portable pseudorandom streams shared by every stochastic component.

The generator is counter-based SplitMix64: output ``i`` of a stream is
``mix64(base + (i + 1) * GAMMA)`` where ``mix64`` is the SplitMix64
finalizer (xor-shifts 30/27/31 with multipliers 0xBF58476D1CE4E5B9 and
0x94D049BB133111EB) and ``GAMMA = 0x9E3779B97F4A7C15``. The stream base is
derived from a (seed, stream) pair, so batch shuffles, weight draws,
dataset splits, and phantom noise each live on independent, reproducible
counters, and any single output can be addressed without replaying the
stream.

Integer draws are bit-exact on any platform. Derived floats use IEEE
double arithmetic: uniforms are ``((bits >> 11) + 0.5) * 2**-53``,
strictly inside (0, 1); normals are Box-Muller, consuming exactly two
uniforms per value whether drawn one at a time or as an array.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_STREAM_SALT = 0xD1B54A32D192ED03

# Stream-id offsets keeping the package's distinct uses of randomness on
# well-separated streams even when user-facing seeds coincide.
DOMAIN_INIT = 1 << 40
DOMAIN_SCHEDULE = 2 << 40
DOMAIN_SPLIT = 3 << 40
DOMAIN_PHANTOM = 4 << 40

_U64 = np.uint64
_MUL1 = _U64(0xBF58476D1CE4E5B9)
_MUL2 = _U64(0x94D049BB133111EB)
_NP_GAMMA = _U64(_GAMMA)


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a 64-bit integer."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _U64(30))) * _MUL1
    z = (z ^ (z >> _U64(27))) * _MUL2
    return z ^ (z >> _U64(31))


class Rng:
    """One addressable stream of the portable generator."""

    def __init__(self, seed: int, stream: int = 0):
        base = mix64((seed & _MASK) + _GAMMA) ^ mix64((stream & _MASK) + _STREAM_SALT)
        self._base = base & _MASK
        self._i = 0

    def next_u64(self) -> int:
        self._i += 1
        return mix64((self._base + self._i * _GAMMA) & _MASK)

    def u64_array(self, count: int) -> np.ndarray:
        idx = np.arange(self._i + 1, self._i + count + 1, dtype=np.uint64)
        self._i += count
        return _mix64_array(_U64(self._base) + idx * _NP_GAMMA)

    def uniform(self) -> float:
        """Uniform double strictly inside (0, 1)."""
        return ((self.next_u64() >> 11) + 0.5) * 2.0**-53

    def uniform_array(self, count: int) -> np.ndarray:
        bits = self.u64_array(count)
        return ((bits >> _U64(11)).astype(np.float64) + 0.5) * 2.0**-53

    def uniform_in(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def normal(self) -> float:
        """Standard normal via Box-Muller; consumes two uniforms."""
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def normal_array(self, count: int) -> np.ndarray:
        u = self.uniform_array(2 * count)
        return np.sqrt(-2.0 * np.log(u[0::2])) * np.cos(2.0 * np.pi * u[1::2])

    def bounded(self, n: int) -> int:
        """Integer in [0, n) by modulo; bias is < 2**-53 for any n used here."""
        if n <= 0:
            raise ValueError(f"bounded() needs n >= 1, got {n}")
        return self.next_u64() % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates, descending."""
        for i in range(len(items) - 1, 0, -1):
            j = self.bounded(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        items = list(range(n))
        self.shuffle(items)
        return items
