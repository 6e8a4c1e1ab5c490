"""Shared builders for randomized but reproducible test fixtures."""

import numpy as np
import pytest

from tfris.floquet import LoadSet, ModulationPattern, StaticScatterModel
from tfris.grid import HarmonicGrid, PortPartition


def random_static_model(
    rng,
    grid,
    partition,
    max_gain=0.85,
    reciprocal=False,
):
    """Random passive static model with spectral norm bounded by max_gain."""
    n = partition.n
    mats = np.empty((grid.n, n, n), dtype=complex)
    for i in range(grid.n):
        m = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        if reciprocal:
            m = (m + m.T) / 2
        mats[i] = m * (max_gain / np.linalg.norm(m, 2))
    return StaticScatterModel(grid, partition, mats, reciprocal=reciprocal)


def random_loads(rng, grid, p, r_lo=0.6, r_hi=0.95):
    """P load states with magnitudes in [r_lo, r_hi] and random phases."""
    r = rng.uniform(r_lo, r_hi, size=(p, grid.n))
    ph = rng.uniform(0, 2 * np.pi, size=(p, grid.n))
    return LoadSet(r * np.exp(1j * ph), grid.harmonics)


def random_pattern(rng, n_ris, q, p, tm, delay=False):
    states = rng.integers(1, p + 1, size=(n_ris, q))
    delays = rng.uniform(0, tm, size=n_ris) if delay else np.zeros(n_ris)
    return ModulationPattern(states, delays)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_grid():
    return HarmonicGrid.centered(135e9, 125e6, 3)


@pytest.fixture
def small_partition():
    return PortPartition.contiguous(2, 2, 3)
