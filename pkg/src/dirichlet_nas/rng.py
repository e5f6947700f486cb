"""Seeded, splittable random streams.

Every stochastic step in the package draws from a ``numpy.random.Generator``
obtained through :func:`stream`.  A stream is identified by the run seed and a
path of names, so ``stream(7, "data")`` and ``stream(7, "subsets")`` are
independent while each is reproducible on its own.
"""
from __future__ import annotations

import zlib

import numpy as np


def _name_key(name: str | int) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name) & 0xFFFFFFFF
    return zlib.crc32(str(name).encode("utf-8"))


def stream(seed: int, *names: str | int) -> np.random.Generator:
    """Return the generator for the named substream of ``seed``."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=tuple(_name_key(n) for n in names))
    return np.random.Generator(np.random.PCG64(ss))


def get_state(gen: np.random.Generator) -> dict:
    return gen.bit_generator.state


def from_state(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)
