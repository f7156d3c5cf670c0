"""Seed-threaded pseudo-random generation.

The generator is xoshiro256** (Blackman & Vigna), a 64-bit shift/rotate
PRNG, seeded through splitmix64. Both are tiny, documented algorithms so
acceptance runs can be reproduced bit-for-bit in any language. All
sampling sites in the package take an explicit generator (or seed);
there is no hidden global state.

Layout of a normal draw: uniforms are `(next_u64() >> 11) * 2**-53` in
[0, 1); normals come from the Box-Muller transform on pairs of uniforms,
with u1 mapped to (0, 1] to keep log() finite. normal(n) consumes
ceil(n/2) pairs and never carries state between calls.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Rng:
    """xoshiro256** stream. State is four u64 words."""

    __slots__ = ("s",)

    def __init__(self, seed: int):
        st = seed & _MASK
        words = []
        for _ in range(4):
            st, out = splitmix64(st)
            words.append(out)
        self.s = words

    @classmethod
    def from_state(cls, state) -> "Rng":
        rng = cls.__new__(cls)
        rng.s = [int(w) & _MASK for w in state]
        if len(rng.s) != 4:
            raise ValueError("xoshiro256 state must have 4 words")
        return rng

    def state(self) -> tuple[int, int, int, int]:
        return tuple(self.s)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection sampling."""
        if n <= 0:
            raise ValueError("below() needs n >= 1")
        span = ((1 << 64) // n) * n  # accept region, multiple of n
        while True:
            u = self.next_u64()
            if u < span:
                return u % n

    def normal_pair(self) -> tuple[float, float]:
        u1 = 1.0 - self.uniform()  # (0, 1]
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        a = 2.0 * math.pi * u2
        return r * math.cos(a), r * math.sin(a)

    def normal(self, shape) -> np.ndarray:
        """Standard-normal array, row-major fill order."""
        if isinstance(shape, int):
            shape = (shape,)
        n = 1
        for d in shape:
            n *= int(d)
        out = np.empty(n, dtype=np.float64)
        i = 0
        while i + 1 < n:
            out[i], out[i + 1] = self.normal_pair()
            i += 2
        if i < n:
            out[i] = self.normal_pair()[0]
        return out.reshape(shape)

    def spawn(self, tag: int) -> "Rng":
        """Derive an independent stream for (self.seed-ish, tag).

        Mixes the tag into the current state through splitmix64 without
        advancing this generator.
        """
        st = (self.s[0] ^ _rotl(self.s[2], 13) ^ (tag & _MASK)) & _MASK
        return Rng(st)
