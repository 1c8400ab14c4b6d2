"""Deterministic random-number streams.

A stream is fully determined by a 64-bit seed plus a spawn path of string
labels: the same seed and the same draw order reproduce the same values
bit for bit, across runs and processes. Named spawning gives independent
child streams (per epoch, per worker) without any shared mutable state.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _label_entropy(label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class RngStream:
    """Counter-tracked wrapper around a seeded PCG64 generator."""

    def __init__(self, seed: int, _path: tuple = ()):
        self.seed = int(seed) & _MASK64
        self.path = _path
        self.counter = 0
        entropy = [self.seed] + [_label_entropy(label) for label in _path]
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def spawn(self, label: str) -> "RngStream":
        """Independent child stream; the same (seed, label) always agree."""
        return RngStream(self.seed, self.path + (label,))

    def standard_normal(self, shape=()) -> np.ndarray:
        out = self._gen.standard_normal(shape)
        self.counter += out.size if hasattr(out, "size") else 1
        return np.asarray(out, dtype=np.float64)

    def uniform(self, low=0.0, high=1.0, shape=()) -> np.ndarray:
        out = self._gen.uniform(low, high, shape)
        self.counter += np.size(out)
        return np.asarray(out, dtype=np.float64)

    def integer(self, upper: int) -> int:
        """Uniform draw from 0..upper-1."""
        self.counter += 1
        return int(self._gen.integers(0, upper))

    def choice(self, items):
        return items[self.integer(len(items))]
