import numpy as np
import pytest

from mspde.coefficients import builtin_drift, builtin_sigma
from mspde.noise import build_diagonal, build_positivity_preserving
from mspde.solver import Problem, SolverConfig, default_u0
from mspde.spectral import SpectralGrid


@pytest.fixture(scope="session")
def grid():
    return SpectralGrid(64, 256)


@pytest.fixture(scope="session")
def small_grid():
    return SpectralGrid(8, 32)


def make_problem(grid, drift="cubic", sigma="bounded_smooth", cov=None, M=16, **sig):
    cov = build_diagonal(grid, M) if cov is None else cov
    return Problem(grid, cov, builtin_drift(drift), builtin_sigma(sigma, **sig), default_u0(grid))


@pytest.fixture(scope="session")
def cubic_problem(grid):
    return make_problem(grid)


@pytest.fixture(scope="session")
def kernel_problem(grid):
    cov = build_positivity_preserving(grid, 0.2, 1.0, 16)
    return make_problem(grid, sigma="nonneg_smooth", cov=cov, rho=0.5)


@pytest.fixture(scope="session")
def small_config():
    return SolverConfig(T=0.5, N_t=64, K=64, N_x=256, M=16, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
