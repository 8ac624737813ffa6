"""xoshiro256** generator with hash-derived substreams.

Every random draw in the package goes through :class:`Xoshiro256`, so a run is
reproducible from its integer seed alone, on any platform and independent of
how work is scheduled across processes.
"""
from __future__ import annotations

import hashlib
import math
from typing import Sequence

import numpy as np

_MASK = (1 << 64) - 1


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


class Xoshiro256:
    """xoshiro256** (Blackman & Vigna), pure Python.

    Parameters
    ----------
    seed:
        64-bit integer expanded to the 256-bit state with splitmix64.
    state:
        Explicit 4-word state; overrides ``seed``. Must not be all zero.
    """

    def __init__(self, seed: int = 0, *, state: Sequence[int] | None = None):
        if state is None:
            s = seed & _MASK
            words = []
            for _ in range(4):
                s, out = splitmix64(s)
                words.append(out)
        else:
            words = [int(w) & _MASK for w in state]
            if len(words) != 4:
                raise ValueError("state must have exactly 4 words")
        if not any(words):
            raise ValueError("xoshiro256** state must not be all zero")
        self._s = words

    @classmethod
    def substream(cls, seed: int, *keys: object) -> "Xoshiro256":
        """Independent generator keyed by ``(seed, *keys)``.

        The key tuple is hashed with SHA-256 and the digest becomes the state,
        so substreams never depend on the order in which they are created.
        """
        text = "/".join([str(int(seed) & _MASK)] + [str(k) for k in keys])
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        words = [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 32, 8)]
        if not any(words):  # pragma: no cover - probability 2**-256
            words[0] = 1
        return cls(state=words)

    @property
    def state(self) -> tuple[int, int, int, int]:
        return tuple(self._s)  # type: ignore[return-value]

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) built from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float, size: int) -> np.ndarray:
        out = np.empty(size, dtype=np.float64)
        span = high - low
        for i in range(size):
            out[i] = low + span * self.random()
        return out

    def below(self, n: int) -> int:
        """Unbiased integer in ``[0, n)`` by rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        threshold = ((1 << 64) - n) % n
        while True:
            r = self.next_u64()
            if r >= threshold:
                return r % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        order = list(range(n))
        self.shuffle(order)
        return order

    def normal(self, size: int) -> np.ndarray:
        """Standard normal draws via the Box-Muller transform."""
        out = np.empty(size, dtype=np.float64)
        i = 0
        while i < size:
            u1 = 1.0 - self.random()  # (0, 1]
            u2 = self.random()
            r = math.sqrt(-2.0 * math.log(u1))
            out[i] = r * math.cos(2.0 * math.pi * u2)
            if i + 1 < size:
                out[i + 1] = r * math.sin(2.0 * math.pi * u2)
            i += 2
        return out
