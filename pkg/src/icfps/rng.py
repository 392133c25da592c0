"""Deterministic, splittable random number generation.

All randomness in the toolkit flows through :class:`Rng`, a thin wrapper
around numpy's counter-based Philox generator.  Counter-based generation
gives identical streams for identical seeds on every platform, and
splitting produces statistically independent child streams so that batch
scene synthesis stays reproducible regardless of generation order.
"""

from __future__ import annotations

import numpy as np


class Rng:
    """Seeded, splittable random source.

    Two instances constructed with equal seeds produce identical draw
    sequences.  An instance is single-owner: code that fans work out in
    parallel must hand each worker its own child from :meth:`split`.
    """

    def __init__(self, seed: int, _seq: np.random.SeedSequence | None = None):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._seq = _seq if _seq is not None else np.random.SeedSequence(self.seed)
        self._gen = np.random.Generator(np.random.Philox(self._seq))

    def split(self, n: int) -> list["Rng"]:
        """Derive ``n`` independent child generators, consuming no draws."""
        if n < 0:
            raise ValueError(f"cannot split into {n} children")
        return [Rng(self.seed, _seq=child) for child in self._seq.spawn(n)]

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    @property
    def generator(self) -> np.random.Generator:
        """Underlying numpy generator, for vectorized draws."""
        return self._gen

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed})"
