import numpy as np
import pytest

from mspde.coefficients import DissipativeDrift, builtin_drift, builtin_sigma
from mspde.errors import ConfigError, NumericalError, UsageError
from mspde.noise import build_diagonal, coarsen_increments
from mspde.solver import (
    Problem,
    SolverConfig,
    batch_increments,
    check_divergence,
    check_dqp,
    default_u0,
    solve_increments,
    solve_path,
    stopping_time,
    sup_moment_estimate,
)
from mspde.spectral import SpectralGrid

from conftest import make_problem


def test_dqp_gate_message():
    with pytest.raises(ConfigError, match=r"d/\(2q\) < 1/2 - 1/p"):
        check_dqp(4, 2)
    check_dqp(4, 4)
    with pytest.raises(ConfigError):
        SolverConfig(p=4, q=2)


def test_initial_state_exact(cubic_problem, small_config):
    traj = solve_path(cubic_problem, small_config)
    assert np.array_equal(traj.u[0], cubic_problem.u0)


def test_heat_flow_exact(grid, small_config, rng):
    pb = make_problem(grid, drift="zero", sigma="constant", c=0.0).with_(u0=rng.standard_normal(grid.K) / grid.k)
    traj = solve_path(pb, small_config)
    expect = pb.u0 * np.exp(-np.outer(traj.times, grid.eigenvalues))
    assert np.max(np.abs(traj.grid_values - expect @ grid.synthesis)) < 1e-12


def test_additive_single_mode_variance():
    g = SpectralGrid(8, 16)
    cov = build_diagonal(g, 1)
    pb = Problem(g, cov, builtin_drift("zero"), builtin_sigma("constant"), default_u0(g))
    cfg = SolverConfig(T=0.5, N_t=1024, K=8, N_x=16, M=1, seed=11)
    dW = batch_increments(cfg, 1, range(10_000))
    states, _ = solve_increments(pb, dW, cfg.dt, stride=cfg.N_t)
    c1 = states[:, -1, 0]
    lam = g.eigenvalues[0]
    exact = cov.q[0] * (1 - np.exp(-2 * lam * cfg.T)) / (2 * lam)
    dev = (c1 - c1.mean()) ** 2
    se = dev.std(ddof=1) / np.sqrt(dev.size)
    assert abs(c1.var(ddof=1) - exact) <= 3 * se


def test_cubic_zero_noise_sup_decreasing(grid, small_config):
    pb = make_problem(grid, sigma="constant", c=0.0).with_(u0=3 * default_u0(grid))
    sup = np.abs(solve_path(pb, small_config).grid_values).max(axis=1)
    assert np.all(np.diff(sup) < 0)


def test_same_seed_identical(cubic_problem, small_config):
    a = solve_path(cubic_problem, small_config, path=4)
    b = solve_path(cubic_problem, small_config, path=4)
    assert np.array_equal(a.u, b.u)
    c = solve_path(cubic_problem, small_config, dW=a.dW)
    assert np.array_equal(a.u, c.u)


def test_increment_shape_guard(cubic_problem, small_config):
    with pytest.raises(UsageError):
        solve_path(cubic_problem, small_config, dW=np.zeros((3, 3)))


def test_self_convergence(cubic_problem):
    cfg = SolverConfig(T=0.5, N_t=64, seed=5)
    dW = batch_increments(cfg, 16, range(20), N_t=1024)
    finals = {}
    for N in (128, 256, 512, 1024):
        inc = coarsen_increments(dW, 1024 // N)
        finals[N] = solve_increments(cubic_problem, inc, cfg.T / N, stride=N)[0][:, -1]
    errs = [np.median(np.linalg.norm(finals[N] - finals[2 * N], axis=1)) for N in (128, 256, 512)]
    assert errs[0] / errs[1] >= 1.3 and errs[1] / errs[2] >= 1.3


def test_stopping_times(cubic_problem, small_config):
    traj = solve_path(cubic_problem, small_config)
    assert stopping_time(traj, 0.5) == 0
    levels = [0.5, 0.9, 1.5, 3.0, 1e9]
    steps = [stopping_time(traj, n) for n in levels]
    finite = [s if s is not None else np.inf for s in steps]
    assert finite == sorted(finite)
    with pytest.raises(UsageError):
        stopping_time(traj, 0.0)


def test_large_level_never_hit(cubic_problem):
    cfg = SolverConfig(seed=2)
    dW = batch_increments(cfg, 16, range(1000))
    states, div = solve_increments(cubic_problem, dW, cfg.dt, stride=8)
    assert not div.any()
    assert np.abs(states @ cubic_problem.grid.synthesis).max() < 1e9


def test_divergent_paths_flagged(grid, small_config):
    blowup = DissipativeDrift("antidissipative", lambda x: x**3, lambda x: 3 * x**2, 3.0)
    pb = make_problem(grid).with_(drift=blowup, u0=10 * default_u0(grid))
    dW = batch_increments(small_config, 16, range(3))
    states, div = solve_increments(pb, dW, small_config.dt)
    assert div.all() and np.isnan(states[:, -1]).all()
    with pytest.raises(NumericalError):
        check_divergence(div)
    check_divergence(np.zeros(5000, bool))


def test_sup_moment_zero_dynamics(grid, small_config):
    pb = make_problem(grid, drift="zero", sigma="constant", c=0.0)
    mean, se, nd = sup_moment_estimate(pb, small_config, 4.0, 10)
    u0max = np.abs(grid.to_grid(pb.u0)).max()
    assert mean == u0max**4 and se == 0.0 and nd == 0


def test_sup_moment_refinement_stable(cubic_problem):
    coarse = SolverConfig(N_t=128, K=64, N_x=256, seed=8)
    g2 = SpectralGrid(128, 512)
    fine_pb = make_problem(g2)
    fine = SolverConfig(N_t=256, K=128, N_x=512, seed=8)
    a, _, _ = sup_moment_estimate(cubic_problem, coarse, 2.0, 200)
    b, _, _ = sup_moment_estimate(fine_pb, fine, 2.0, 200)
    assert abs(a - b) / a < 0.10
