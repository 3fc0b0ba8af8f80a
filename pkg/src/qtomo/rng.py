"""Deterministic random number generation.

Every stochastic routine in the package takes an explicit ``numpy.random.Generator``.
Generators are built on the counter-based Philox bit generator keyed by an explicit
64-bit seed, so runs are bit-reproducible and per-sample streams can be derived
cheaply without generator state hand-off.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    """Generator keyed by a 64-bit seed (counter-based Philox)."""
    return np.random.Generator(np.random.Philox(key=np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))


def derive_seed(base: int, index: int) -> int:
    """Per-item seed derived from a base seed and an item index.

    XOR with a splitmix-style spread of the index keeps derived streams distinct
    even for consecutive indices.
    """
    x = (index + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    x = x ^ (x >> 31)
    return (base ^ x) & 0xFFFFFFFFFFFFFFFF


def spawn(rng_seed: int, *indices: int) -> np.random.Generator:
    """Generator for a nested grid cell, e.g. ``spawn(seed, level_idx, sample_idx)``."""
    s = rng_seed
    for i in indices:
        s = derive_seed(s, i)
    return make_rng(s)
