"""Deterministic, label-splittable random streams.

All randomness in the package flows from one root seed through labeled
child streams. Distinct label paths never collide, and a child stream's
draws do not depend on when (or whether) its siblings are consumed.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .dists import sample_index


def _label_hash(label) -> int:
    digest = hashlib.blake2b(repr(label).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """A seeded stream addressed by (seed, label path).

    ``child(*labels)`` derives an independent substream; the underlying
    generator is built lazily so that spawning children is cheap.
    """

    __slots__ = ("seed", "counter", "_path", "_gen")

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.counter = 0
        self._path = _path
        self._gen = None

    def child(self, *labels) -> "RngStream":
        path = self._path + tuple(_label_hash(l) for l in labels)
        return RngStream(self.seed, path)

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(entropy=(self.seed,) + self._path)
            self._gen = np.random.Generator(np.random.PCG64(ss))
        return self._gen

    def uniform(self) -> float:
        self.counter += 1
        return float(self.generator.random())

    def uniforms(self, n: int) -> np.ndarray:
        self.counter += n
        return self.generator.random(n)

    def integer(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        self.counter += 1
        return int(self.generator.integers(n))

    def categorical(self, weights) -> int:
        """Index drawn proportionally to a non-negative weight vector."""
        return sample_index(np.asarray(weights, dtype=np.float64), self.uniform())

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"RngStream(seed={self.seed}, depth={len(self._path)})"
