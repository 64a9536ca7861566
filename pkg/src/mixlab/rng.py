"""Deterministic random streams with hierarchical derivation."""
from __future__ import annotations

import zlib

import numpy as np

__all__ = ["RngStream"]


def _key_part(value) -> int:
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, str):
        return zlib.crc32(value.encode("utf-8"))
    raise TypeError(f"stream id must be int or str, got {type(value).__name__}")


class RngStream:
    """Seeded random source: same seed and call sequence, same draws.

    ``derive`` builds an independent child stream keyed by ``(seed, ids...)``,
    so consumers that draw different amounts of randomness can never shift
    each other's sequences.
    """

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._key = tuple(_key)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self._key))
        )

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, key={self._key})"

    def derive(self, *ids) -> "RngStream":
        """Independent child stream; the parent's state is untouched."""
        return RngStream(self.seed, self._key + tuple(_key_part(i) for i in ids))

    def uniform(self, size=None):
        return self._gen.random(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high=high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def shuffle(self, values) -> None:
        self._gen.shuffle(values)

    def normal(self, size=None, scale: float = 1.0):
        return self._gen.normal(0.0, scale, size)

    def choice(self, values, size=None, replace: bool = True):
        return self._gen.choice(values, size=size, replace=replace)

    def beta(self, alpha: float, size=None):
        """Symmetric Beta(alpha, alpha) draw(s).

        alpha == 1 short-circuits to plain uniform draws (the distributions
        coincide, and the short circuit keeps that case bit-identical to
        uniform sampling). Other alphas use the two-gamma construction
        g1 / (g1 + g2).
        """
        if alpha <= 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        if alpha == 1.0:
            return self.uniform(size)
        g1 = self._gen.gamma(alpha, size=size)
        g2 = self._gen.gamma(alpha, size=size)
        return g1 / (g1 + g2)
