"""Seed plumbing.

Every random choice in the toolkit flows from one root seed through named
substreams, so runs are reproducible end to end and individual stages can be
re-run in isolation without disturbing each other.  Substream names are part
of the public interface: "split", "init", "shuffle", "dropout", "noise",
"bootstrap".
"""

from __future__ import annotations

import zlib

import numpy as np

# Registered stream names.  New stages must add their name here; reusing a
# name for a different purpose would silently correlate two stages.
STREAM_NAMES = ("split", "init", "shuffle", "dropout", "noise", "bootstrap")

_MASK64 = (1 << 64) - 1
_GOLDEN64 = 0x9E3779B97F4A7C15


def substream(root_seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Return the numpy generator for a named substream of ``root_seed``.

    ``index`` selects independent children within one stream (per-tree
    bootstrap streams, per-session noise streams, ...).  The mapping is pure:
    the same (seed, name, index) triple always yields the same generator
    state, regardless of call order.
    """
    if name not in STREAM_NAMES:
        raise ValueError(f"unknown substream {name!r}; registered: {STREAM_NAMES}")
    key = zlib.crc32(name.encode("ascii"))
    ss = np.random.SeedSequence(root_seed, spawn_key=(key, index))
    return np.random.Generator(np.random.PCG64(ss))


def substream_seed(root_seed: int, name: str, index: int = 0) -> int:
    """64-bit seed for the portable generator, derived like :func:`substream`."""
    if name not in STREAM_NAMES:
        raise ValueError(f"unknown substream {name!r}; registered: {STREAM_NAMES}")
    key = zlib.crc32(name.encode("ascii"))
    x = (root_seed & _MASK64) ^ ((key & _MASK64) * _GOLDEN64 & _MASK64)
    x = (x + (index & _MASK64) * 0xBF58476D1CE4E5B9) & _MASK64
    # one scramble round so consecutive indices do not yield near-equal seeds
    return PortableRng(x).next_u64()


class PortableRng:
    """SplitMix64 with float helpers, kept bit-identical across languages.

    The cloaking code uses this generator instead of numpy so that the
    browser companion can reproduce displacement streams exactly (golden-file
    tests compare the two).  Do not change the update constants or the float
    derivation: both are mirrored in the TypeScript implementation.
    """

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN64) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def uniform(self) -> float:
        """Uniform double in the half-open interval (0, 1].

        The open lower end keeps log() finite in the Gaussian transform.
        """
        return ((self.next_u64() >> 11) + 1) * (2.0 ** -53)

    def gauss_pair(self) -> tuple[float, float]:
        """One Box-Muller draw: two independent standard normals."""
        import math

        u1 = self.uniform()
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        a = 2.0 * math.pi * u2
        return r * math.cos(a), r * math.sin(a)
