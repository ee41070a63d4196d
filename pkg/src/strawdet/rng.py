"""SplitMix64 random stream.

SplitMix64 is counter based: output ``i`` (0-based) is ``mix(seed + (i + 1) * GAMMA)``,
so blocks of outputs can be produced with vectorised uint64 arithmetic and still
match the scalar reference bit for bit.
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1

_GAMMA = np.uint64(GAMMA)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Deterministic 64-bit generator; identical seeds give identical streams."""

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        return int(self.u64_array(1)[0])

    def u64_array(self, n: int) -> np.ndarray:
        """Next ``n`` raw outputs as uint64, advancing the stream."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * _GAMMA
            out = _mix(z)
        self.state = (self.state + n * GAMMA) & MASK64
        return out

    def uniform(self, n: int) -> np.ndarray:
        """``n`` float64 values in [0, 1) built from the top 53 bits."""
        return (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def uniform_open(self, n: int) -> np.ndarray:
        """``n`` float64 values in (0, 1]; safe as a log argument."""
        return ((self.u64_array(n) >> np.uint64(11)).astype(np.float64) + 1.0) * (1.0 / (1 << 53))

    def normal(self, n: int) -> np.ndarray:
        """``n`` standard normal samples by Box-Muller (both branches used)."""
        pairs = (n + 1) // 2
        u1 = self.uniform_open(pairs)
        u2 = self.uniform(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        return np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]

    def randint(self, low: int, high: int) -> int:
        """Integer in [low, high) (floor of a scaled uniform)."""
        return low + int(self.uniform(1)[0] * (high - low))

    def shuffle(self, items: list) -> list:
        """Fisher-Yates shuffle returning a new list."""
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.randint(0, i + 1)
            out[i], out[j] = out[j], out[i]
        return out

    def spawn(self, *keys: int) -> "SplitMix64":
        """Independent child stream keyed on this stream's seed and ``keys``."""
        s = self.state
        for k in keys:
            s = int(_mix(np.array([(s ^ (k & MASK64)) & MASK64], dtype=np.uint64))[0])
        return SplitMix64(s)
