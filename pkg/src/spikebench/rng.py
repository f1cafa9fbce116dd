"""Keyed, counter-based random streams.

Every random draw in the benchmark is addressed by an explicit key
(master seed, stream tag, entity ids, counter) instead of consuming a
shared sequential state.  That makes any entity's randomness computable
on any process without coordination, which is what keeps the generated
network and stimulus identical no matter how the neurons are split
across processes.

The word function is a splitmix64-style finalizer applied to a running
fold of the key components.  It is fixed: changing it changes every
generated network, so it is part of the on-disk/on-wire contract of the
benchmark.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MULT_A = 0xBF58476D1CE4E5B9
_MULT_B = 0x94D049BB133111EB

# Stream tags keep draws for different purposes statistically disjoint
# even when the remaining key components coincide.
STREAM_TARGET = 0x11
STREAM_DELAY = 0x22
STREAM_THALAMIC = 0x33


def mix64(x: int) -> int:
    """Scalar 64-bit finalizer (splitmix64)."""
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * _MULT_A) & _MASK64
    x = ((x ^ (x >> 27)) * _MULT_B) & _MASK64
    return x ^ (x >> 31)


def _mix64_array(x: np.ndarray) -> np.ndarray:
    """Vectorized mix64 over a uint64 array; bit-identical to the scalar."""
    x = (x + np.uint64(_GOLDEN))
    x = (x ^ (x >> np.uint64(30))) * np.uint64(_MULT_A)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(_MULT_B)
    return x ^ (x >> np.uint64(31))


class KeyedRng:
    """Stateless generator: word(*key) is a pure function of seed and key."""

    def __init__(self, master_seed: int):
        self.master_seed = master_seed & _MASK64
        self._root = mix64(self.master_seed)

    def word(self, *key: int) -> int:
        """One uniform 64-bit word for the given key tuple."""
        h = self._root
        for k in key:
            h = mix64(h ^ (k & _MASK64))
        return h

    def words(self, *key: int, counters: np.ndarray) -> np.ndarray:
        """Vector of words for (key..., c) over every c in `counters`.

        Equivalent to [word(*key, c) for c in counters] but vectorized.
        """
        h = self._root
        for k in key:
            h = mix64(h ^ (k & _MASK64))
        c = np.asarray(counters, dtype=np.uint64)
        return _mix64_array(np.uint64(h) ^ c)

    def uniform_int(self, lo: int, hi: int, *key: int) -> int:
        """Uniform integer in [lo, hi] (modulo bias < (hi-lo+1)/2**64)."""
        return lo + self.word(*key) % (hi - lo + 1)

    def uniform_ints(self, lo: int, hi: int, *key: int,
                     counters: np.ndarray) -> np.ndarray:
        span = np.uint64(hi - lo + 1)
        return (self.words(*key, counters=counters) % span).astype(np.int64) + lo
