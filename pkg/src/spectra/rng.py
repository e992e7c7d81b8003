"""Deterministic random number generation.

All randomness in the package flows through SplitMix64 so that results
are reproducible bit-for-bit from a 64-bit seed, independent of platform
and of any library RNG. Gaussian draws use Box-Muller on consecutive
53-bit uniforms. Per-tensor streams are derived by hashing (seed, name,
rank), so work scheduled in parallel cannot change the numbers.
"""

from __future__ import annotations

import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

_FNV_BASIS = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix64_int(z: int) -> int:
    z &= 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def _fnv1a64(data: bytes) -> int:
    h = _FNV_BASIS
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


class SplitMix64:
    """SplitMix64 stream: state advances by the golden-gamma increment,
    outputs are the finalizer of the state."""

    def __init__(self, seed: int):
        self._state = int(seed) & 0xFFFFFFFFFFFFFFFF

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & 0xFFFFFFFFFFFFFFFF
        return _mix64_int(self._state)

    def uniforms(self, count: int) -> np.ndarray:
        """count 53-bit uniforms in [0, 1), advancing the state by count."""
        if count == 0:
            return np.zeros(0)
        idx = np.arange(1, count + 1, dtype=np.uint64)
        states = (np.uint64(self._state) + idx * np.uint64(_GAMMA)) & _MASK
        self._state = int(states[-1])
        z = (states ^ (states >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        z = z ^ (z >> np.uint64(31))
        return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normals(self, count: int) -> np.ndarray:
        """count standard normals via Box-Muller on consecutive uniforms.

        Draws 2*ceil(count/2) uniforms; the trailing sine variate is
        discarded for odd counts. A zero uniform (probability 2^-53) is
        bumped to 2^-53 so the log stays finite.
        """
        if count == 0:
            return np.zeros(0)
        pairs = (count + 1) // 2
        u = self.uniforms(2 * pairs)
        u1 = np.maximum(u[0::2], 2.0**-53)
        u2 = u[1::2]
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:count]


def stream_for(seed: int, name: str, rank: int) -> SplitMix64:
    """Independent stream for (seed, tensor name, rank index).

    The name is folded in through FNV-1a, then two SplitMix64 finalizer
    passes separate the seed and rank contributions.
    """
    h = _fnv1a64(name.encode("utf-8"))
    s = _mix64_int((int(seed) & 0xFFFFFFFFFFFFFFFF) ^ h)
    return SplitMix64(_mix64_int(s ^ (int(rank) & 0xFFFFFFFFFFFFFFFF)))
