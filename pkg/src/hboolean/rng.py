"""Named, reproducible random streams.

Every stream is a Philox generator keyed by ``(master seed, name, *indices)``
through :class:`numpy.random.SeedSequence`, so a trial's randomness depends only
on its key and never on scheduling or on how many other trials ran first.
"""
from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream_key(name: str, *indices: int) -> tuple[int, ...]:
    return (_name_key(name),) + tuple(int(i) for i in indices)


def stream_seed(master: int, name: str, *indices: int) -> int:
    """64-bit seed that reproduces the stream ``name[indices]`` on its own."""
    ss = np.random.SeedSequence(int(master) & _MASK64, spawn_key=stream_key(name, *indices))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generator_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed) & _MASK64)))


def stream(master: int, name: str, *indices: int) -> np.random.Generator:
    """Generator for the named stream; equal keys give identical draws."""
    return generator_from_seed(stream_seed(master, name, *indices))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return stream(0 if rng is None else int(rng), "default")
