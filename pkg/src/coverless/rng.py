"""Deterministic xoshiro256** generator with splitmix64 seeding.

The scalar stream (``lanes=1``) is plain xoshiro256**. With ``lanes=L`` the
generator runs ``L`` independent xoshiro256** states side by side; lane ``k``
is seeded from splitmix64 outputs ``4k .. 4k+3`` of the seed, and draws are
emitted round by round (lane 0 first within each round). ``lanes=1`` is
therefore the same stream as the scalar reference.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
_TWO_53 = float(1 << 53)


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """Scalar xoshiro256** reference stream."""

    def __init__(self, seed: int):
        sm = seed & MASK64
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self.s = s

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self) -> float:
        """Double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) / _TWO_53


class LaneRng:
    """Lane-parallel xoshiro256** for bulk draws (jitter, payloads)."""

    def __init__(self, seed: int, lanes: int = 1024):
        if lanes < 1:
            raise ValueError("lanes must be >= 1")
        self.lanes = lanes
        sm = seed & MASK64
        words = []
        for _ in range(4 * lanes):
            sm, out = splitmix64(sm)
            words.append(out)
        self._s = np.array(words, dtype=np.uint64).reshape(lanes, 4).T.copy()
        self._pending = np.empty(0, dtype=np.uint64)

    @staticmethod
    def _rotl(x: np.ndarray, k: int) -> np.ndarray:
        return (x << np.uint64(k)) | (x >> np.uint64(64 - k))

    def _round(self) -> np.ndarray:
        s0, s1, s2, s3 = self._s
        result = self._rotl(s1 * np.uint64(5), 7) * np.uint64(9)
        t = s1 << np.uint64(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        self._s[3] = self._rotl(s3, 45)
        return result

    def next_u64(self, n: int) -> np.ndarray:
        """The next ``n`` 64-bit outputs of the interleaved stream."""
        chunks = [self._pending]
        have = self._pending.size
        while have < n:
            out = self._round()
            chunks.append(out)
            have += out.size
        allv = np.concatenate(chunks)
        self._pending = allv[n:]
        return allv[:n]

    def uniform(self, n: int) -> np.ndarray:
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) / _TWO_53

    def normal(self, n: int) -> np.ndarray:
        """Standard normals by Box-Muller; each pair of uniforms gives two values."""
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        theta = 2.0 * math.pi * u2
        out = np.empty(2 * m)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def bytes(self, n: int) -> bytes:
        words = self.next_u64((n + 7) // 8)
        return words.astype("<u8").tobytes()[:n]


def derive_seed(seed: int, stream: int) -> int:
    """Independent sub-seed for a named stream of a run."""
    sm = (seed ^ ((stream * 0xD1B54A32D192ED03) & MASK64)) & MASK64
    _, out = splitmix64(sm)
    return out
