"""Counter-based deterministic random number generation.

Every stochastic component in the package (weight init, data synthesis,
shuffling, edge dropping) draws from a SplitMix64 counter stream.  The
output for draw ``i`` of a stream is a pure function of ``(key, i)``, so
substreams can be generated in any order (or in parallel) and still be
bit-reproducible across platforms.

Mixing function: SplitMix64 (Steele, Lea & Flood 2014), 64-bit.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def _mix(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on uint64 arrays."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def _key_from_parts(parts) -> int:
    """Fold an arbitrary tuple of ints/strings into a 64-bit stream key."""
    z = np.uint64(0x5851F42D4C957F2D)
    for part in parts:
        if isinstance(part, str):
            for b in part.encode("utf-8"):
                with np.errstate(over="ignore"):
                    z = _mix((z + np.uint64(b)) * _GAMMA)
        else:
            with np.errstate(over="ignore"):
                z = _mix((z + np.uint64(int(part) & 0xFFFFFFFFFFFFFFFF)) * _GAMMA)
    return int(z)


class CounterRng:
    """A seekable SplitMix64 stream.

    State is the pair ``(key, counter)``; draws are vectorized, and the
    stream can be serialized/restored exactly via :meth:`state` /
    :meth:`from_state`.
    """

    def __init__(self, *key_parts):
        self._key = np.uint64(_key_from_parts(key_parts))
        self._counter = 0

    # -- state ---------------------------------------------------------

    def state(self) -> dict:
        return {"key": int(self._key), "counter": self._counter}

    @classmethod
    def from_state(cls, state: dict) -> "CounterRng":
        rng = cls()
        rng._key = np.uint64(state["key"])
        rng._counter = int(state["counter"])
        return rng

    def substream(self, *key_parts) -> "CounterRng":
        """Independent stream derived from this stream's key (not its counter)."""
        return CounterRng(int(self._key), *key_parts)

    # -- raw draws -----------------------------------------------------

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter, self._counter + n, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            return _mix(self._key + (idx + np.uint64(1)) * _GAMMA)

    def uniform(self, shape=()) -> np.ndarray:
        """Uniform float64 in [0, 1)."""
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return u.reshape(shape) if shape else float(u[0])

    def normal(self, shape=()) -> np.ndarray:
        """Standard normal via Box-Muller on paired uniforms."""
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        m = (n + 1) // 2
        u1 = (self._raw(m) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        u2 = (self._raw(m) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        r = np.sqrt(-2.0 * np.log(1.0 - u1))
        out = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        return out.reshape(shape) if shape else float(out[0])

    def randint(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform integer in [low, high). Uses rejection-free modulo; the
        bias is < 2**-40 for the ranges used here (< 2**20)."""
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        span = np.uint64(high - low)
        vals = (self._raw(n) % span).astype(np.int64) + low
        return vals.reshape(shape) if shape else int(vals[0])

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(0, i + 1)
            items[i], items[j] = items[j], items[i]
