"""Deterministic random-number streams.

Every stochastic operation in the package takes a SeededRng.  A stream is
identified by (seed, stream); identical identifiers reproduce identical
draw sequences on any platform (numpy's PCG64 guarantees this).  Derived
streams let independent stages (dataset generation, trigger sampling,
training shuffles, ...) share one experiment seed without coupling their
draw sequences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15  # splitmix64 increment, decorrelates derived ids


@dataclass(frozen=True)
class SeededRng:
    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(ss))

    def derive(self, offset: int) -> "SeededRng":
        """Independent stream keyed off this one, stable across runs."""
        mixed = (self.stream * _GOLDEN + offset + 1) & _MASK64
        return SeededRng(self.seed, mixed)
