"""Portable pseudo-random numbers.

The generator is xoshiro256** (Blackman & Vigna) with its 256-bit state
expanded from a 64-bit seed by splitmix64. Everything is integer arithmetic
on Python ints masked to 64 bits, so a given seed yields the same stream on
every platform. Floats are built from the top 53 bits of each output.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_INV_2_53 = 1.0 / (1 << 53)


def splitmix64(x: int) -> tuple[int, int]:
    """Advance a splitmix64 state; return ``(new_state, output)``."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return x, z ^ (z >> 31)


class Rng:
    """xoshiro256** seeded through splitmix64."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & _MASK
        sm = self.seed
        words = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            words.append(out)
        self._s = words

    # -- state ---------------------------------------------------------------

    @property
    def state(self) -> tuple[int, int, int, int]:
        return tuple(self._s)

    @state.setter
    def state(self, words) -> None:
        words = [int(w) & _MASK for w in words]
        if len(words) != 4:
            raise ValueError("xoshiro256** state is exactly four 64-bit words")
        if not any(words):
            raise ValueError("all-zero state is a fixed point of xoshiro256**")
        self._s = words

    @classmethod
    def from_state(cls, words) -> "Rng":
        rng = cls(0)
        rng.state = words
        return rng

    def spawn(self, tag: int) -> "Rng":
        """Independent child stream derived from the next output and ``tag``."""
        return Rng(self.next_u64() ^ ((tag * 0xD1342543DE82EF95) & _MASK))

    # -- raw draws -----------------------------------------------------------

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        r = ((s1 * 5) & _MASK)
        result = ((((r << 7) | (r >> 57)) & _MASK) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK
        self._s = [s0, s1, s2, s3]
        return result

    def u64_array(self, n: int) -> list[int]:
        s0, s1, s2, s3 = self._s
        out = [0] * n
        for i in range(n):
            r = (s1 * 5) & _MASK
            out[i] = ((((r << 7) | (r >> 57)) & _MASK) * 9) & _MASK
            t = (s1 << 17) & _MASK
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & _MASK
        self._s = [s0, s1, s2, s3]
        return out

    # -- derived distributions -----------------------------------------------

    def random(self, size=None):
        """Uniform doubles in [0, 1)."""
        if size is None:
            return (self.next_u64() >> 11) * _INV_2_53
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        vals = np.array([w >> 11 for w in self.u64_array(n)], dtype=np.float64)
        return (vals * _INV_2_53).reshape(shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        u = self.random(size)
        return low + (high - low) * u

    def normal(self, mean: float = 0.0, std: float = 1.0, size=None):
        """Gaussian draws via Box-Muller, consuming two uniforms per pair."""
        if size is None:
            u1 = 1.0 - self.random()
            u2 = self.random()
            return mean + std * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        u = self.random(2 * m)
        u1 = 1.0 - u[0::2]
        u2 = u[1::2]
        rad = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * m)
        z[0::2] = rad * np.cos(2.0 * np.pi * u2)
        z[1::2] = rad * np.sin(2.0 * np.pi * u2)
        return (mean + std * z[:n]).reshape(shape)

    def integers(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection sampling."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (_MASK + 1) - ((_MASK + 1) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integers(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return np.array(perm, dtype=np.int64)
