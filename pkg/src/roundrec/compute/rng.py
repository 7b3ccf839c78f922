"""Deterministic counter-based random numbers.

The generator is a splitmix64 stream addressed by (seed, counter): the value at
any position depends only on those two integers, never on Python process state.
That lets the compiled kernels draw the exact same stream as the pure-Python
fallback (both just evaluate ``value(seed, counter + i)``) and makes every run
with the same seed and call sequence bit-identical.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


def mix64(z: int) -> int:
    """splitmix64 finalizer."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def stream_u64(seed: int, counter: int) -> int:
    """The raw 64-bit value at position `counter` of the stream for `seed`."""
    return mix64((seed + (counter + 1) * _GOLDEN) & _MASK64)


def _fnv1a(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


class RngState:
    """A named position in a deterministic random stream.

    Identical seed plus identical call sequence reproduces the exact same
    samples, regardless of platform or kernel backend.
    """

    __slots__ = ("seed", "counter")

    def __init__(self, seed: int, counter: int = 0):
        self.seed = seed & _MASK64
        self.counter = counter

    def child(self, tag: str) -> "RngState":
        """Derive an independent stream for a named purpose."""
        return RngState(mix64(self.seed ^ _fnv1a(tag.encode("utf-8"))))

    def next_u64(self) -> int:
        value = stream_u64(self.seed, self.counter)
        self.counter += 1
        return value

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        """Uniform double in [lo, hi)."""
        u = (self.next_u64() >> 11) * _INV_2_53
        return lo + (hi - lo) * u

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("randint needs n >= 1")
        return int(((self.next_u64() >> 11) * _INV_2_53) * n)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def __repr__(self):
        return f"RngState(seed={self.seed:#x}, counter={self.counter})"
