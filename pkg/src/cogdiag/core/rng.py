"""Seeded randomness.

Every randomized step in the toolkit draws from a :class:`numpy.random.Generator`.
Independent sub-streams are derived from a root seed plus a tuple of keys, so a
worker's draws depend only on *what* it computes, never on scheduling order.
"""
from __future__ import annotations

import numbers
import zlib

import numpy as np

__all__ = ["RandomSource", "as_generator", "derive_rng", "derive_seed"]


def _key_to_int(key) -> int:
    if isinstance(key, (bool, np.bool_)):
        return int(key)
    if isinstance(key, numbers.Integral):
        if key < 0:
            raise ValueError(f"negative stream key {key}")
        return int(key)
    if isinstance(key, str):
        # crc32 is stable across platforms and interpreter runs (unlike hash())
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"stream keys must be int or str, got {type(key).__name__}")


def derive_seed(seed: int, *keys) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key_to_int(k) for k in keys])


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Generator for the sub-stream ``(seed, *keys)``."""
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *keys)))


def as_generator(random_state) -> np.random.Generator:
    """Coerce ``None``, an int seed, a :class:`RandomSource` or a Generator."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    if isinstance(random_state, RandomSource):
        return random_state.generator
    if random_state is None:
        return np.random.default_rng()
    if isinstance(random_state, numbers.Integral):
        return derive_rng(int(random_state))
    raise TypeError(f"cannot build a Generator from {random_state!r}")


class RandomSource:
    """A root seed and the generator for its main stream.

    ``spawn`` hands out independent, reproducible sub-streams.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.generator = derive_rng(self.seed)

    def spawn(self, *keys) -> np.random.Generator:
        return derive_rng(self.seed, *keys)

    def __repr__(self):
        return f"RandomSource(seed={self.seed})"
