import numpy as np
import pytest

from mspde.coefficients import builtin_drift, cutoff_drift, damped_derivative, power_drift
from mspde.errors import UsageError
from mspde.lab import (
    LADDER_COLUMNS,
    PANEL_X,
    LadderReport,
    cauchy_diagnostic,
    comparison_report,
    loglog_slope,
    map_chunks,
    moment_table,
    panel_steps,
    power_mean_monotone,
    resolve_threads,
    smoothed_noise_limit,
    solve_v_lambda,
    solve_vbar_lambda,
    solve_y_lambda,
)
from mspde.malliavin import propagate_atlas
from mspde.noise import build_diagonal
from mspde.solver import SolverConfig, solve_path

from conftest import make_problem

CFG = SolverConfig(T=0.5, N_t=64, seed=6)


def test_panel_steps():
    assert panel_steps(256) == [32, 64, 128, 192, 256]


def test_resolve_threads(monkeypatch):
    monkeypatch.delenv("MSPDE_THREADS", raising=False)
    assert resolve_threads(3) == 3
    monkeypatch.setenv("MSPDE_THREADS", "2")
    assert resolve_threads(5) == 2


def test_map_chunks_order_independent_of_threads():
    fn = lambda paths: [p * p for p in paths]  # noqa: E731
    one = map_chunks(fn, 103, threads=1)
    four = map_chunks(fn, 103, threads=4)
    assert one == four and sum(len(c) for c in one) == 103


def test_v_lambda_zero_sigma(grid):
    pb = make_problem(grid, sigma="constant", c=0.0)
    assert not solve_v_lambda(pb, CFG, 0.05, 32).d.any()


def test_v_lambda_linear_drift_closed_form(cubic_problem):
    lam = 0.2
    pb = cubic_problem.with_(drift=builtin_drift("linear"))
    atlas = solve_v_lambda(pb, CFG, lam, 48)
    damped = solve_path(pb.with_(drift=power_drift(1.0, 1 / (1 + lam))), CFG)
    assert np.max(np.abs(atlas.d - propagate_atlas(damped, 48).d)) < 1e-12


def test_v_lambda_lipschitz_limit(cubic_problem):
    pb = cubic_problem.with_(drift=cutoff_drift(builtin_drift("cubic"), 1.0))
    ref = propagate_atlas(solve_path(pb, CFG), 64).d
    lams = [0.02, 0.01, 0.005]
    gaps = [np.abs(solve_v_lambda(pb, CFG, lam, 64).d - ref).max() for lam in lams]
    # first order in lambda
    assert loglog_slope(lams, gaps) >= 0.8
    assert max(g / lam for g, lam in zip(gaps, lams)) <= 1.5 * min(g / lam for g, lam in zip(gaps, lams))


def test_y_lambda_cases(grid):
    zero = make_problem(grid, drift="zero")
    assert np.array_equal(solve_y_lambda(zero, CFG, 0.05, 40).d, solve_v_lambda(zero, CFG, 0.05, 40).d)
    const = make_problem(grid, sigma="constant", c=0.8)
    y = solve_y_lambda(const, CFG, 0.05, 40)
    seeds = 0.8 * (const.cov.columns @ grid.analysis)  # (M, K)
    for i in (0, 17, 39):
        assert np.max(np.abs(y.d[i] - seeds * grid.decay((40 - i) * CFG.dt))) < 1e-12


def test_vbar_cases(cubic_problem, grid):
    pb = cubic_problem.with_(u0=np.zeros(grid.K))
    traj = solve_path(pb, CFG, dW=np.zeros((CFG.N_t, 16)))
    vbar = solve_vbar_lambda(traj, 0.05, 32)
    assert np.array_equal(vbar.d, propagate_atlas(traj, 32, fprime=None).d)
    traj = solve_path(cubic_problem, CFG)
    fp = cubic_problem.drift.f_prime(traj.grid_values)
    for lam in (0.1, 0.0125):
        F = damped_derivative(fp, lam)
        assert np.all(np.abs(F) <= np.minimum(np.abs(fp), 1 / lam) + 1e-12)
    with pytest.raises(UsageError):
        solve_vbar_lambda(traj, 0.0, 10)


def test_comparison_requires_flags(cubic_problem):
    with pytest.raises(UsageError):
        comparison_report(cubic_problem, CFG, 0.05, 2)


def test_comparison_trivial_when_drift_flat(kernel_problem):
    pb = kernel_problem.with_(drift=builtin_drift("zero"))
    rep = comparison_report(pb, CFG, 0.05, 3, resolutions=(64, 128))
    for lvl in rep.summary["comparison"]:
        assert lvl["norm_fraction"] == 0 and lvl["pair_fraction"] == 0
        assert abs(lvl["max_rel_excess"]) < 1e-12
    for row in rep.rows:
        assert set(row) == set(LADDER_COLUMNS)
        vf = row["violation_fraction"]
        assert vf is None or 0 <= vf <= 1


def test_comparison_negative_control_recorded(kernel_problem):
    rep = comparison_report(kernel_problem, CFG, 0.05, 4, resolutions=(64,))
    lvl = rep.summary["comparison"][0]
    assert 0 < lvl["control_negative_fraction"] < 1
    assert np.all(lvl["nv_mean"] >= 0)


def test_cauchy_boundaries(cubic_problem, grid):
    rep = cauchy_diagnostic(cubic_problem, CFG, [0.1], 2)
    assert rep.rows == []
    with pytest.raises(UsageError):
        cauchy_diagnostic(cubic_problem, CFG, [0.05, 0.1], 2)
    flat = make_problem(grid, sigma="constant", c=0.0)
    rep = cauchy_diagnostic(flat, CFG, [0.1, 0.05, 0.025], 2)
    assert rep.summary["cauchy"]["delta"] == [0.0, 0.0, 0.0]


def test_cauchy_lipschitz_rate(cubic_problem):
    pb = cubic_problem.with_(drift=cutoff_drift(builtin_drift("cubic"), 1.0))
    lams = [0.04, 0.02, 0.01, 0.005]
    rep = cauchy_diagnostic(pb, CFG, lams, 4)
    delta = rep.summary["cauchy"]["delta"]
    assert all(b < a for a, b in zip(delta, delta[1:]))
    assert loglog_slope(lams, delta) >= 0.8


def test_smoothed_noise(kernel_problem):
    r = smoothed_noise_limit(kernel_problem, CFG, [0.0], 1.0, n_paths=1)
    assert r["v"] == [0.0] and r["y"] == [0.0]
    with pytest.raises(UsageError):
        smoothed_noise_limit(kernel_problem, CFG, [0.1], 0.1)


def test_smoothed_noise_single_mode_linear(grid):
    pb = make_problem(grid, M=1, cov=build_diagonal(grid, 1))
    r = smoothed_noise_limit(pb, CFG, [4e-4, 2e-4, 1e-4], 1.0, n_paths=1)
    v = r["v"]
    assert v[0] / v[1] == pytest.approx(2.0, rel=0.05)
    assert v[1] / v[2] == pytest.approx(2.0, rel=0.05)


def test_moment_table_zero_sigma(grid):
    pb = make_problem(grid, sigma="constant", c=0.0)
    rep = moment_table(pb, CFG, [2, 4], [0.05], [4], 3)
    assert all(row["value"] == 0 for row in rep.rows)


def test_moment_table_additive_isometry(grid):
    from mspde.config import build_config
    from mspde.experiments import isometry_closed_form

    cfg = SolverConfig(T=0.5, N_t=2048, seed=1)
    pb = make_problem(grid, drift="zero", sigma="constant")
    rep = moment_table(pb, cfg, [2], [0.05], [4], 2)
    direct = [r for r in rep.rows if r["experiment"] == "moments_direct"][0]
    run = build_config({"drift.name": "zero", "diffusion.name": "constant"}, "isometry")
    closed = isometry_closed_form(run, direct["t"], [direct["x"]])[0]
    # the entry is deterministic for additive noise (zero SE); the gap is the O(dt) Riemann bias
    assert direct["std_error"] < 1e-12 * direct["value"]
    assert direct["value"] == pytest.approx(closed, rel=0.01)


def test_power_mean_monotone(rng):
    x = np.abs(rng.standard_normal(500))
    assert power_mean_monotone(x, [1, 2, 4, 6])


def test_ladder_report():
    rep = LadderReport()
    rep.add("demo", 1.5, lam=0.1, violation_fraction=0.0)
    other = LadderReport([dict(experiment="x", value=2.0)], {"k": 1})
    rep.extend(other)
    assert len(rep.rows) == 2 and rep.summary == {"k": 1}
    assert set(rep.rows[0]) == set(LADDER_COLUMNS)


def test_loglog_slope():
    lams = np.array([0.1, 0.05, 0.025])
    assert loglog_slope(lams, 3 * lams**2) == pytest.approx(2.0)
