"""Seeded random streams.

Every stochastic component in the package draws from a numpy PCG64
generator built here. PCG64 streams are bit-stable for a fixed seed, so
identical seeds reproduce identical training runs, perturbation searches
and datasets. Child streams are derived from integer key paths, never from
global state, which keeps grid workers independent of scheduling order.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return a generator for (seed, *keys); same arguments, same stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


def model_rng(master_seed: int, config_index: int) -> np.random.Generator:
    """Stream owned by one training job in the grid."""
    return make_rng(master_seed, 1, config_index)


def measure_rng(master_seed: int, config_index: int) -> np.random.Generator:
    """Private stream for the perturbation searches of one model."""
    return make_rng(master_seed, 2, config_index)
