"""Deterministic random streams built on a counter-based bit generator."""

from __future__ import annotations

import numpy as np

_U64 = 2**64


class RngStream:
    """Seeded random stream with reproducible child-stream derivation.

    Backed by the Philox counter-based generator, so a given (seed, path)
    pair yields the same draw sequence on every platform. Child streams
    are independent of the parent and of each other.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        seed = int(seed)
        if not 0 <= seed < _U64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self.path = tuple(int(p) for p in path)
        self._gen = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(seed, spawn_key=self.path))
        )

    def child(self, index: int) -> RngStream:
        """Derive the index-th child stream; never shares draws with the parent."""
        return RngStream(self.seed, self.path + (int(index),))

    # Explicit passthroughs so the random surface the package relies on is
    # visible in one place.
    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, x):
        return self._gen.permutation(x)

    def choice(self, a, size=None, replace=True):
        return self._gen.choice(a, size=size, replace=replace)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path})"
