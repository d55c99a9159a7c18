"""Seedable, platform-independent pseudo-random generator.

Surface phases and derived seeds must be bit-identical across machines and
runs, so the generator is pinned to xoshiro256** with SplitMix64 state
initialization rather than delegating to whatever numpy ships. Bulk sampling
(noise fields, scene placement) goes through numpy Generators seeded from
values produced here; the stream that defines a realization is always this
one.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a SplitMix64 state; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def hash64(value: int) -> int:
    """One-shot SplitMix64 finalizer, used to hash sample ids into seeds."""
    return splitmix64(value & _MASK64)[1]


def derive_seed(master_seed: int, sample_id: int) -> int:
    """Per-sample seed: master XOR hash(sample id), both 64-bit."""
    return (master_seed & _MASK64) ^ hash64(sample_id)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256StarStar:
    """xoshiro256** (Blackman & Vigna), seeded via SplitMix64.

    Pure-integer implementation: every platform with 64-bit ints produces
    the same stream for the same seed.
    """

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        s = self.seed
        state = []
        for _ in range(4):
            s, out = splitmix64(s)
            state.append(out)
        self._s = state

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """One double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniforms(self, n: int) -> np.ndarray:
        """n doubles in [0, 1), in stream order."""
        return np.array([self.uniform() for _ in range(n)], dtype=np.float64)

    def phases(self, n: int) -> np.ndarray:
        """n angles uniform on [0, 2*pi)."""
        return 2.0 * np.pi * self.uniforms(n)
