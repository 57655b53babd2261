import numpy as np
import pytest

from hjhomog.action import Lattice
from hjhomog.effective import DirectionGrid, effective_hamiltonian, effective_lagrangian_table
from hjhomog.media import make_periodic_medium, make_quasiperiodic_medium
from hjhomog.stablenorm import MetricFamily, metric_medium

GOLDEN = (5**0.5 - 1) / 2

# lattice used for 1D effective quantities: velocity resolution dx/dt = 1/4
FINE_1D = Lattice(dx=0.0125, dt=0.05, speed_cap=4.0)
METRIC_2D = Lattice(dx=0.025, dt=0.1, speed_cap=2.0)
METRIC_BASES = [[0.0, 0.0], [0.5, 0.0]]


@pytest.fixture(scope="session")
def free1():
    return make_periodic_medium(1)


@pytest.fixture(scope="session")
def cosine1():
    return make_periodic_medium(1, {"preset": "cosine", "amplitude": 1.0})


@pytest.fixture(scope="session")
def quasi1():
    return make_quasiperiodic_medium(GOLDEN, {"preset": "cosine_product", "amplitude": 1.0})


@pytest.fixture(scope="session")
def conformal_family():
    return MetricFamily.conformal(0.5)


@pytest.fixture(scope="session")
def flat_family():
    return MetricFamily.flat()


@pytest.fixture(scope="session")
def cosine_table(cosine1):
    grid = DirectionGrid.uniform(1, 2.5, 1 / 16)
    tab = effective_lagrangian_table(cosine1, grid, [0], [4, 8, 16], FINE_1D)
    return effective_hamiltonian(tab, np.arange(-32, 33) / 16)


@pytest.fixture(scope="session")
def quasi_table16(quasi1):
    grid = DirectionGrid.uniform(1, 2.5, 1 / 16)
    return effective_lagrangian_table(quasi1, grid, range(8), [4, 8, 16], FINE_1D)


def _metric_table(family):
    medium = metric_medium(family)
    grid = DirectionGrid.uniform(2, 1.5, 0.5, disc=True)
    return effective_lagrangian_table(medium, grid, [0], [2, 4], METRIC_2D, METRIC_BASES)


@pytest.fixture(scope="session")
def conformal_table(conformal_family):
    return _metric_table(conformal_family)


@pytest.fixture(scope="session")
def flat_table(flat_family):
    return _metric_table(flat_family)
