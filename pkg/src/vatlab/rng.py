"""Seeded random streams.

All stochastic draws in the library (weight init, shuffles, adversarial
direction seeds) go through one Rng so that a run is fully determined by its
64-bit seed. The generator is numpy's PCG64, whose output stream is documented
and stable for a fixed seed; draws are consumed sequentially, so a prefix of
the stream does not depend on how many values are requested later.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


class Rng:
    """Deterministic pseudorandom stream keyed by a 64-bit seed."""

    def __init__(self, seed: int, _bitgen: np.random.PCG64 | None = None):
        self.seed = int(seed) & _MASK64
        bitgen = _bitgen if _bitgen is not None else np.random.PCG64(self.seed)
        self._gen = np.random.Generator(bitgen)

    def normal(self, shape: tuple[int, ...] | int = ()) -> np.ndarray:
        """Standard normal draws, float64."""
        return self._gen.standard_normal(shape)

    def uniform(self, low: float, high: float, shape: tuple[int, ...] | int = ()) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def jumped(self, jumps: int = 1) -> "Rng":
        """A stream far separated from this seed's main stream.

        Used to keep auxiliary draws (outer dataset split, label hiding) off
        the training stream while every stream stays a pure function of the
        configured seed.
        """
        return Rng(self.seed, _bitgen=np.random.PCG64(self.seed).jumped(jumps))
