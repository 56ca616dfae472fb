"""Seeded random streams.

Every stochastic stage takes an :class:`RngStream`.  A stream is identified by
``(seed, stream_id)``; the pair is folded into a 128-bit Philox key with
SplitMix64, so streams are reproducible across platforms (Philox is a
counter-based generator with a fixed algorithm in numpy) and distinct stream
ids give independent sequences.

Key derivation::

    k0 = splitmix64(seed ^ splitmix64(stream_id))
    k1 = splitmix64(k0 ^ 0x9E3779B97F4A7C15 ^ stream_id)
    Philox(key=[k0, k1])
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One SplitMix64 output for state ``x`` (pure integer arithmetic)."""
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix(*parts: int) -> int:
    """Fold a sequence of integers into one 64-bit value."""
    h = 0
    for p in parts:
        h = splitmix64(h ^ (int(p) & MASK64))
    return h


class RngStream:
    """A single-owner random stream keyed by ``(seed, stream_id)``."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & MASK64
        self.stream_id = int(stream_id) & MASK64
        k0 = splitmix64(self.seed ^ splitmix64(self.stream_id))
        k1 = splitmix64(k0 ^ GOLDEN ^ self.stream_id)
        self.key = (k0, k1)
        self.generator = np.random.Generator(np.random.Philox(key=np.array(self.key, dtype=np.uint64)))

    def child(self, *path: int) -> "RngStream":
        """Derive an independent stream from this stream's seed and a path of ids."""
        return RngStream(self.seed, mix(self.stream_id, *path))

    # thin conveniences over the numpy generator
    def random(self, size=None):
        return self.generator.random(size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def choice(self, a, size=None, replace=True, p=None):
        return self.generator.choice(a, size=size, replace=replace, p=p)

    def permutation(self, x):
        return self.generator.permutation(x)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"
