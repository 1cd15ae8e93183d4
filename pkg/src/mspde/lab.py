"""Approximation ladders, comparison principle and moment tables.

Three tangent flows share the machinery of ``malliavin``:

* v_lam:    Du_lam for the Yosida-regularized equation (trajectory u_lam, coefficient f_lam');
* vbar_lam: the true trajectory u with the damped coefficient F_lam = f'(u)/(1 - lam f'(u));
* y_lam:    trajectory u_lam with the drift derivative removed.

Monte Carlo experiments evaluate them on a fixed probe panel with the reverse
sweep; paths are processed in fixed-size chunks so results do not depend on
the number of worker threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .coefficients import cutoff_drift, damped_derivative, yosida_drift
from .errors import UsageError
from .malliavin import AUTO, TangentAtlas, adjoint_sensitivities, checkpoint_stride, directional_history, propagate_atlas
from .noise import HVector, coarsen_increments, path_rng, sample_increments
from .solver import Problem, SolverConfig, Trajectory, check_divergence, solve_increments, solve_path

PANEL_FRACTIONS = (0.125, 0.25, 0.5, 0.75, 1.0)
PANEL_X = np.round(np.linspace(0.1, 0.9, 9), 12)
CHUNK = 25
COMPARISON_REL_TOL = 1e-3

LADDER_COLUMNS = ("experiment", "lam", "n", "p", "t", "x", "value", "std_error", "violation_fraction")


def panel_steps(N_t: int) -> list[int]:
    if N_t % 8:
        raise UsageError(f"N_t must be a multiple of 8 for the probe panel, got {N_t}")
    return [int(round(f * N_t)) for f in PANEL_FRACTIONS]


def resolve_threads(threads: int | None = None) -> int:
    env = os.environ.get("MSPDE_THREADS")
    if env:
        return max(1, int(env))
    return max(1, int(threads or 1))


def map_chunks(fn, n_paths: int, threads: int = 1, chunk: int = CHUNK) -> list:
    """Apply fn(paths) to consecutive fixed-size path chunks; results in chunk order."""
    chunks = [range(s, min(n_paths, s + chunk)) for s in range(0, n_paths, chunk)]
    if threads <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))


def fine_increments(config: SolverConfig, M: int, paths, N_t: int) -> np.ndarray:
    dt = config.T / N_t
    return np.stack([sample_increments(path_rng(config.seed, p), N_t, dt, M) for p in paths])


@dataclass
class LadderReport:
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def add(self, experiment, value, lam=None, n=None, p=None, t=None, x=None, std_error=None, violation_fraction=None):
        self.rows.append(dict(experiment=experiment, lam=lam, n=n, p=p, t=t, x=x, value=value,
                              std_error=std_error, violation_fraction=violation_fraction))

    def extend(self, other: "LadderReport") -> "LadderReport":
        self.rows.extend(other.rows)
        self.summary.update(other.summary)
        return self


# ---------------------------------------------------------------------------
# single-path ladder members (forward atlas)


def _traj_for(problem: Problem, config: SolverConfig, path: int, dW) -> Trajectory:
    return solve_path(problem, config, path=path, dW=dW)


def solve_v_lambda(problem: Problem, config: SolverConfig, lam: float, J: int, path: int = 0, dW=None) -> TangentAtlas:
    """Atlas of u_lam, the solution driven by the Yosida drift f_lam."""
    traj = _traj_for(problem.with_(drift=yosida_drift(problem.drift, lam)), config, path, dW)
    return propagate_atlas(traj, J)


def solve_y_lambda(problem: Problem, config: SolverConfig, lam: float, J: int, path: int = 0, dW=None) -> TangentAtlas:
    """As ``solve_v_lambda`` without the drift-derivative term."""
    traj = _traj_for(problem.with_(drift=yosida_drift(problem.drift, lam)), config, path, dW)
    return propagate_atlas(traj, J, fprime=None)


def damped_prime(problem: Problem, lam: float):
    fp = problem.drift.f_prime
    return lambda U: damped_derivative(fp(U), lam)


def solve_vbar_lambda(traj: Trajectory, lam: float, J: int) -> TangentAtlas:
    """Atlas on the true trajectory with coefficient F_lam = f'(u) / (1 - lam f'(u))."""
    if lam <= 0:
        raise UsageError("lambda must be positive")
    return propagate_atlas(traj, J, fprime=damped_prime(traj.problem, lam))


# ---------------------------------------------------------------------------
# batched panel evaluation


def _panel_grads(problem, dW, dt, targets, points, fprime=AUTO):
    N_t = dW.shape[1]
    stride = checkpoint_stride(N_t)
    states, divergent = solve_increments(problem, dW, dt, stride=stride)
    grads = adjoint_sensitivities(problem, states, dW, dt, targets, points, fprime=fprime, stride=stride)
    return grads, divergent


def _h_norms(grads, dt):
    """list of (P, n, J, M) -> (P, n_targets, n) H-norms."""
    return np.stack([np.sqrt(_kernels.h_norm_sq(g, dt)) for g in grads], axis=1)


def panel_h_norms(problem, config: SolverConfig, n_paths: int, fprime=AUTO, threads: int = 1, N_t=None):
    """||Du(t, x)||_H on the probe panel for each path: (n_paths, 5, 9) plus divergence mask."""
    N_t = config.N_t if N_t is None else N_t
    dt = config.T / N_t
    targets = panel_steps(N_t)

    def work(paths):
        dW = fine_increments(config, problem.cov.M, paths, N_t)
        grads, div = _panel_grads(problem, dW, dt, targets, PANEL_X, fprime)
        return _h_norms(grads, dt), div

    parts = map_chunks(work, n_paths, threads)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


# ---------------------------------------------------------------------------
# comparison principle


def positive_battery(problem: Problem, N_t: int, dt: float):
    """Directions h = Q b with b >= 0 (so Qh = Q^2 b >= 0), as noise coordinates (n_h, N_t, M)."""
    cov = problem.cov
    z = problem.grid.x
    t = (np.arange(N_t) + 0.5) * dt
    T = N_t * dt
    windows = [(0.0, T), (0.0, T / 2), (T / 2, T)]
    out = []
    for c in (0.2, 0.4, 0.6, 0.8):
        b = np.maximum(0.0, 1.0 - np.abs(z - c) / 0.1)
        h_field = cov.apply_Q(b)
        for lo, hi in windows:
            mask = ((t >= lo) & (t < hi)).astype(float)
            fields = mask[:, None] * h_field[None, :]
            out.append(HVector(fields, dt).noise_coords(cov))
    return np.stack(out)


def negative_control(problem: Problem, N_t: int, dt: float):
    """h with sign-changing Qh: Q applied to sin(2 pi z)."""
    cov = problem.cov
    h_field = cov.apply_Q(np.sin(2 * np.pi * problem.grid.x))
    return HVector(np.broadcast_to(h_field, (N_t, h_field.size)).copy(), dt).noise_coords(cov)[None]


def _h_norm_of(k, dt):
    return np.sqrt(np.sum(k * k, axis=(-2, -1)) * dt)


def _comparison_level(problem, config, lam, n_paths, N_t, N_fine, threads):
    cov = problem.cov
    plam = problem.with_(drift=yosida_drift(problem.drift, lam))
    dt = config.T / N_t
    targets = panel_steps(N_t)
    battery = positive_battery(problem, N_t, dt)
    control = negative_control(problem, N_t, dt)
    bat_norm = _h_norm_of(battery, dt)

    def work(paths):
        dW = fine_increments(config, cov.M, paths, N_fine)
        if N_fine != N_t:
            dW = coarsen_increments(dW, N_fine // N_t)
        gv, div = _panel_grads(plam, dW, dt, targets, PANEL_X, AUTO)
        gy, _ = _panel_grads(plam, dW, dt, targets, PANEL_X, None)
        nv, ny = _h_norms(gv, dt), _h_norms(gy, dt)  # (P, 5, 9)
        scale = ny.reshape(len(paths), -1).max(axis=1)  # path scale
        tol = COMPARISON_REL_TOL * scale
        norm_viol = nv > ny + tol[:, None, None]
        excess = ((nv - ny) / scale[:, None, None]).max(axis=(1, 2))
        lo_viol = np.zeros(len(paths))
        hi_viol = np.zeros(len(paths))
        ctrl_neg = np.zeros(len(paths))
        qpos_viol = np.zeros(len(paths))
        qpos_count = 0
        for ti, J in enumerate(targets):
            kb = battery[:, :J]  # (n_h, J, M)
            pv = np.einsum("pxjm,hjm->phx", gv[ti], kb) * dt
            py = np.einsum("pxjm,hjm->phx", gy[ti], kb) * dt
            tp = COMPARISON_REL_TOL * scale[:, None, None] * bat_norm[None, :, None]
            lo_viol += (pv < -tp).sum(axis=(1, 2))
            hi_viol += (pv > py + tp).sum(axis=(1, 2))
            pc = np.einsum("pxjm,hjm->phx", gv[ti], control[:, :J]) * dt
            ctrl_neg += (pc < 0).sum(axis=(1, 2))
            for p in range(len(paths)):
                qfield = gv[ti][p] @ cov.columns  # (n, J, N_x): Q v as a field in (tau, z)
                qscale = np.abs(qfield).max()
                qpos_viol[p] += np.count_nonzero(qfield < -COMPARISON_REL_TOL * qscale)
            qpos_count += qfield.size
        return dict(norm_viol=norm_viol, excess=excess, lo=lo_viol, hi=hi_viol, ctrl=ctrl_neg,
                     qpos=qpos_viol, qpos_count=qpos_count, div=div, nv=nv, ny=ny)

    parts = map_chunks(work, n_paths, threads)
    cat = lambda k: np.concatenate([p[k] for p in parts])  # noqa: E731
    div = cat("div")
    check_divergence(div, "comparison")
    keep = ~div
    n_h = battery.shape[0]
    n_points = len(targets) * len(PANEL_X)
    norm_viol = cat("norm_viol")[keep]
    triples = keep.sum() * n_h * n_points
    return dict(
        N_t=N_t,
        norm_fraction=float(norm_viol.mean()),
        pair_fraction=float((cat("lo")[keep].sum() + cat("hi")[keep].sum()) / triples),
        pair_lower_fraction=float(cat("lo")[keep].sum() / triples),
        control_negative_fraction=float(cat("ctrl")[keep].sum() / (keep.sum() * n_points)),
        qpos_fraction=float(cat("qpos")[keep].sum() / (keep.sum() * parts[0]["qpos_count"])),
        max_rel_excess=float(cat("excess")[keep].max()),
        point_fraction=norm_viol.mean(axis=0),
        nv_mean=cat("nv")[keep].mean(axis=0),
        ny_mean=cat("ny")[keep].mean(axis=0),
        n_used=int(keep.sum()),
    )


def comparison_report(problem: Problem, config: SolverConfig, lam: float, n_paths: int,
                      resolutions=None, threads: int = 1) -> LadderReport:
    """Check 0 <= <v_lam, h> <= <y_lam, h>, Q v_lam >= 0 and ||v_lam|| <= ||y_lam|| on the panel.

    Resolutions share the noise: the finest level is sampled, coarser ones are sums of increments.
    """
    if not problem.cov.positivity_preserving:
        raise UsageError("comparison needs a positivity-preserving covariance")
    if not problem.diffusion.nonneg:
        raise UsageError("comparison needs a nonnegative diffusion")
    resolutions = sorted(resolutions or (config.N_t, 2 * config.N_t))
    N_fine = resolutions[-1]
    report = LadderReport()
    levels = []
    for N_t in resolutions:
        lvl = _comparison_level(problem, config, lam, n_paths, N_t, N_fine, threads)
        levels.append(lvl)
        times = np.array(panel_steps(N_t)) * (config.T / N_t)
        for ti, t in enumerate(times):
            for xi, x in enumerate(PANEL_X):
                report.add(f"comparison_norm_Nt{N_t}", float(lvl["nv_mean"][ti, xi]), lam=lam, t=float(t), x=float(x),
                           violation_fraction=float(lvl["point_fraction"][ti, xi]))
        report.add(f"comparison_pairing_Nt{N_t}", lvl["pair_fraction"], lam=lam, violation_fraction=lvl["pair_fraction"])
        report.add(f"comparison_qpositivity_Nt{N_t}", lvl["qpos_fraction"], lam=lam, violation_fraction=lvl["qpos_fraction"])
        report.add(f"comparison_negative_control_Nt{N_t}", lvl["control_negative_fraction"], lam=lam,
                   violation_fraction=lvl["control_negative_fraction"])
        report.add(f"comparison_max_rel_excess_Nt{N_t}", lvl["max_rel_excess"], lam=lam)
    report.summary["comparison"] = levels
    return report


# ---------------------------------------------------------------------------
# Cauchy net of vbar_lam


def _lq_h_norm(grid, diff, dt, q):
    """diff (n_x, J, M) on the full grid -> ||.||_{L^q_x H}."""
    hn = np.sqrt(_kernels.h_norm_sq(diff, dt))
    return float((grid.h * np.sum(hn**q)) ** (1.0 / q))


def cauchy_diagnostic(problem: Problem, config: SolverConfig, lams, n_paths: int, q: float | None = None,
                      threads: int = 1) -> LadderReport:
    """Delta(lam) = median over paths of max over panel times of ||vbar_lam - vbar_{lam/2}||_{L^q_x H}."""
    lams = [float(v) for v in lams]
    if any(b >= a for a, b in zip(lams, lams[1:])):
        raise UsageError("lambda grid must be decreasing")
    report = LadderReport()
    if len(lams) < 2:
        report.summary["cauchy"] = dict(lams=lams, delta=[], per_path=np.zeros((n_paths, 0)))
        return report
    q = config.q if q is None else q
    grid = problem.grid
    dt = config.dt
    targets = panel_steps(config.N_t)
    ladder = lams + [lams[-1] / 2]

    def work(paths):
        dW = fine_increments(config, problem.cov.M, paths, config.N_t)
        stride = checkpoint_stride(config.N_t)
        states, div = solve_increments(problem, dW, dt, stride=stride)
        out = np.zeros((len(paths), len(ladder) - 1))
        prev = None
        for li, lam in enumerate(ladder):
            g = adjoint_sensitivities(problem, states, dW, dt, targets, grid.x, damped_prime(problem, lam), stride)
            if prev is not None:
                for p in range(len(paths)):
                    out[p, li - 1] = max(_lq_h_norm(grid, g[t][p] - prev[t][p], dt, q) for t in range(len(targets)))
            prev = g
        return out, div

    parts = map_chunks(work, n_paths, threads, chunk=2)
    per_path = np.concatenate([p[0] for p in parts])
    div = np.concatenate([p[1] for p in parts])
    check_divergence(div, "cauchy")
    per_path = per_path[~div]
    delta = np.median(per_path, axis=0)
    # keep the pair lam -> lam/2 for every requested lam; the last one uses the extra half step
    for lam, dv, col in zip(lams, delta, per_path.T):
        report.add("cauchy", float(dv), lam=lam, std_error=float(col.std(ddof=1) / np.sqrt(col.size)) if col.size > 1 else None)
    report.summary["cauchy"] = dict(lams=lams, delta=delta.tolist(), per_path=per_path)
    return report


def loglog_slope(lams, values) -> float:
    return float(np.polyfit(np.log(lams), np.log(values), 1)[0])


# ---------------------------------------------------------------------------
# smoothed noise B_eps


def smoothed_noise_limit(problem: Problem, config: SolverConfig, eps_grid, alpha: float, lam: float = 0.05,
                         n_paths: int = 4, h_coords=None) -> dict:
    """sup_{t,x} |v^h_eps - v^h| (and the same for y^h) with B replaced by (I + eps A)^(-alpha) B."""
    d = config.d
    if not alpha > d / (2 * config.q):
        raise UsageError(f"alpha must exceed d/(2q) = {d / (2 * config.q):g}")
    grid = problem.grid
    plam = problem.with_(drift=yosida_drift(problem.drift, lam))
    if h_coords is None:
        h_coords = positive_battery(problem, config.N_t, config.dt)[0]
    eps_grid = [float(e) for e in eps_grid]

    def flows(pb, dW):
        traj = solve_path(pb, config, dW=dW)
        v = directional_history(traj, h_coords, config.N_t)
        y = directional_history(traj, h_coords, config.N_t, fprime=None)
        return v @ grid.synthesis, y @ grid.synthesis

    diffs = np.zeros((n_paths, len(eps_grid), 2))
    for path in range(n_paths):
        dW = sample_increments(path_rng(config.seed, path), config.N_t, config.dt, problem.cov.M)
        v0, y0 = flows(plam, dW)
        for ei, eps in enumerate(eps_grid):
            pe = plam.with_(cov=plam.cov.smoothed(grid, eps, alpha))
            ve, ye = flows(pe, dW)
            diffs[path, ei] = np.abs(ve - v0).max(), np.abs(ye - y0).max()
    mean = diffs.mean(axis=0)
    return dict(eps=eps_grid, alpha=alpha, lam=lam, v=mean[:, 0].tolist(), y=mean[:, 1].tolist(), per_path=diffs)


# ---------------------------------------------------------------------------
# moments


MOMENT_INCONCLUSIVE_SE = 0.25


def _moment_entries(norms: np.ndarray, ps):
    """norms (P, 5, 9) -> per p: (max over panel of E||.||^p, its SE, argmax)."""
    out = {}
    for p in ps:
        sample = norms**p
        mean = sample.mean(axis=0)
        se = sample.std(axis=0, ddof=1) / np.sqrt(sample.shape[0])
        idx = np.unravel_index(np.argmax(mean), mean.shape)
        out[p] = (float(mean[idx]), float(se[idx]), idx, mean, se)
    return out


def moment_table(problem: Problem, config: SolverConfig, ps, lams, ns, n_paths: int, threads: int = 1) -> LadderReport:
    """max over panel of E||Du(t,x)||_H^p along the Yosida (lam) and cutoff (n) ladders."""
    ps = [float(p) for p in ps]
    report = LadderReport()
    levels = [("yosida", lam, None, problem.with_(drift=yosida_drift(problem.drift, lam))) for lam in lams]
    levels += [("cutoff", None, n, problem.with_(drift=cutoff_drift(problem.drift, n))) for n in ns]
    levels.append(("direct", None, None, problem))
    times = np.array(panel_steps(config.N_t)) * config.dt
    table = {}
    for ladder, lam, n, pb in levels:
        norms, div = panel_h_norms(pb, config, n_paths, threads=threads)
        check_divergence(div, f"moments {ladder}")
        entries = _moment_entries(norms[~div], ps)
        for p, (val, se, idx, mean, sem) in entries.items():
            report.add(f"moments_{ladder}", val, lam=lam, n=n, p=p, t=float(times[idx[0]]), x=float(PANEL_X[idx[1]]),
                       std_error=se)
            table[(ladder, lam, n, p)] = (val, se)
    report.summary["moments"] = table
    return report


def power_mean_monotone(norms: np.ndarray, ps) -> bool:
    """E[X^p]^(1/p) nondecreasing in p on the same sample."""
    vals = [np.mean(norms**p) ** (1.0 / p) for p in sorted(ps)]
    return all(b >= a * (1 - 1e-12) for a, b in zip(vals, vals[1:]))
