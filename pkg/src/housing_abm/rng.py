"""Seeding helpers.

Every random draw traces back to one integer seed. Named substreams are
derived with :class:`numpy.random.SeedSequence` spawn keys, so adding a new
stream never shifts the draws of an existing one.
"""

from __future__ import annotations

import zlib

import numba
import numpy as np


def _key(name: str | int) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    return zlib.crc32(name.encode())


def seed_sequence(seed: int, *names: str | int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_key(n) for n in names))


def substream(seed: int, *names: str | int) -> np.random.Generator:
    """Independent generator for ``(seed, *names)``."""
    return np.random.default_rng(seed_sequence(seed, *names))


def derive_seed(seed: int, *names: str | int) -> int:
    """A 63-bit integer seed for a child computation (e.g. one Monte Carlo run)."""
    return int(seed_sequence(seed, *names).generate_state(1, np.uint64)[0] >> np.uint64(1))


@numba.njit(cache=True, inline="always")
def _splitmix64(x):
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = x
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def hash_uniform(key, a, b):
    """Uniform in [0, 1) as a pure function of ``(key, a, b)``.

    Used where a draw must not depend on the order in which a loop visits
    items, e.g. whether a given buyer sees a given listing this month.
    """
    h = _splitmix64(np.uint64(key) ^ _splitmix64(np.uint64(a)))
    h = _splitmix64(h ^ np.uint64(b))
    return (h >> np.uint64(11)) * (1.0 / 9007199254740992.0)
