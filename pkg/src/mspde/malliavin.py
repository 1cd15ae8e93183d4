"""Discrete Malliavin derivative of the exponential Euler solution.

Convention: d[i][l] = du_J / d(dW[i][l]), identified with D_s u for
s in [s_i, s_{i+1}); hence ||Du(t_J, x)||_H^2 = sum_{i,l} d[i][l](x)^2 dt and
<Du(t_J, x), h>_H = sum_{i,l} d[i][l](x) k_il dt with k = Q^(1/2) h in
noise coordinates (``HVector.noise_coords``).

The tangent recursion is the exact derivative of ``solver.step``:
    d_{j+1} = S(dt)[d_j + P(a_j * E d_j)],   a_j = dt f'(u_j) + sigma'(u_j) B dW_j,
seeded by d_{i+1}[i][l] = S(dt) P(sigma(u_i) B g_l).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .errors import NumericalError, UsageError
from .noise import HVector
from .solver import Problem, Trajectory, step
from .spectral import SpectralField

AUTO = "auto"


def _drift_prime(problem: Problem, fprime):
    if isinstance(fprime, str) and fprime == AUTO:
        return problem.drift.f_prime
    return fprime


def tangent_coefficient(problem: Problem, U: np.ndarray, dW: np.ndarray, dt: float, fprime=AUTO) -> np.ndarray:
    """a = dt f'(U) + sigma'(U) (B dW) on the grid; ``fprime=None`` drops the drift term."""
    fprime = _drift_prime(problem, fprime)
    xi = problem.cov.noise_field(dW)
    sp = problem.diffusion.sigma_prime(U)
    return _kernels.tangent_coefficient(None if fprime is None else fprime(U), sp, xi, dt)


def seed_rows(problem: Problem, U: np.ndarray, decay: np.ndarray) -> np.ndarray:
    """S(dt) P(sigma(U) B g_l) for every noise mode l; U (..., N_x) -> (..., M, K)."""
    sig = problem.diffusion.sigma(U)
    return decay * ((sig[..., None, :] * problem.cov.columns) @ problem.grid.analysis)


@dataclass
class TangentAtlas:
    """Sensitivities d[i][l] of u at target step J, i < J; coefficients in the sine basis."""

    d: np.ndarray = field(repr=False)  # (J, M, K)
    J: int
    dt: float
    trajectory: Trajectory = field(repr=False)
    flagged: bool = False

    @property
    def grid(self):
        return self.trajectory.problem.grid

    def at(self, x) -> np.ndarray:
        """d[i][l](x) for points x, shape (J, M, len(x))."""
        return self.d @ self.grid.basis_at(x).T

    def grid_values(self) -> np.ndarray:
        return self.d @ self.grid.synthesis

    def mode_energy(self, x) -> np.ndarray:
        """sum_i d[i][l](x)^2 dt per noise mode l, shape (M, len(x))."""
        v = self.at(x)
        return np.sum(v * v, axis=0) * self.dt


def v0_singular(traj: Trajectory, J: int, i: int, l: int) -> SpectralField:
    """S((J - i) dt)[sigma(u_i) B g_l]: the discrete Dirac-in-time initial datum."""
    if i >= J:
        raise UsageError(f"source step {i} must precede target {J}")
    problem = traj.problem
    grid = problem.grid
    U = traj.grid_values[i]
    coeffs = (problem.diffusion.sigma(U) * problem.cov.columns[l]) @ grid.analysis
    return SpectralField(grid, coeffs * grid.decay((J - i) * traj.dt))


def propagate_atlas(traj: Trajectory, J: int, fprime=AUTO, observer: Callable | None = None) -> TangentAtlas:
    """Batched forward sweep: all (i, l) tangents share one coefficient field per step.

    ``observer(j, d)`` is called after each step with the atlas at target j (a view).
    """
    if not 0 < J <= traj.N_t:
        raise UsageError(f"target step must be in 1..{traj.N_t}")
    problem = traj.problem
    grid = problem.grid
    M, K = problem.cov.M, grid.K
    decay = grid.decay(traj.dt)
    U = traj.grid_values
    d = np.zeros((J, M, K))
    flat = d.reshape(J * M, K)
    for j in range(J):
        if j:
            a = tangent_coefficient(problem, U[j], traj.dW[j], traj.dt, fprime)
            rows = flat[: j * M]
            rows += ((rows @ grid.synthesis) * a) @ grid.analysis
            rows *= decay
        d[j] = seed_rows(problem, U[j], decay)
        if observer is not None:
            observer(j + 1, d[: j + 1])
    flagged = not np.isfinite(d).all()
    return TangentAtlas(d, J, traj.dt, traj, flagged)


def propagate_atlas_naive(traj: Trajectory, J: int, fprime=AUTO) -> TangentAtlas:
    """Reference: one independent recursion per (i, l). O(N_t^2 M) small solves."""
    problem = traj.problem
    grid = problem.grid
    M = problem.cov.M
    decay = grid.decay(traj.dt)
    U = traj.grid_values
    coeff = [tangent_coefficient(problem, U[j], traj.dW[j], traj.dt, fprime) for j in range(J)]
    d = np.zeros((J, M, grid.K))
    for i in range(J):
        for l in range(M):
            z = v0_singular(traj, i + 1, i, l).coeffs
            for j in range(i + 1, J):
                z = decay * (z + (grid.to_grid(z) * coeff[j]) @ grid.analysis)
            d[i, l] = z
    return TangentAtlas(d, J, traj.dt, traj)


def malliavin_norm_sq(atlas: TangentAtlas, x) -> np.ndarray:
    """||Du(t_J, x)||_H^2 = sum_{i,l} d[i][l](x)^2 dt for each point in x."""
    v = np.moveaxis(atlas.at(x), -1, 0)  # (n_x, J, M)
    return _kernels.h_norm_sq(v, atlas.dt)


def malliavin_norm(atlas: TangentAtlas, x) -> np.ndarray:
    return np.sqrt(malliavin_norm_sq(atlas, x))


def pair_atlas(atlas: TangentAtlas, h: HVector, x) -> np.ndarray:
    """<Du(t_J, x), h>_H from the atlas."""
    k = h.noise_coords(atlas.trajectory.problem.cov)[: atlas.J]
    return np.einsum("iln,il->n", atlas.at(x), k) * atlas.dt


def directional_history(traj: Trajectory, k: np.ndarray, J: int, fprime=AUTO, problem: Problem | None = None):
    """z_j = <Du(t_j), h>_H for j = 0..J given noise coordinates k (N_t, M). Returns (J+1, K)."""
    problem = traj.problem if problem is None else problem
    grid = problem.grid
    decay = grid.decay(traj.dt)
    U = traj.grid_values
    z = np.zeros((J + 1, grid.K))
    for j in range(J):
        a = tangent_coefficient(problem, U[j], traj.dW[j], traj.dt, fprime)
        forcing = a * grid.to_grid(z[j]) + traj.dt * problem.diffusion.sigma(U[j]) * problem.cov.noise_field(k[j])
        z[j + 1] = decay * (z[j] + forcing @ grid.analysis)
    return z


def directional_tangent(traj: Trajectory, h: HVector, J: int, fprime=AUTO) -> SpectralField:
    """<Du(t_J, .), h>_H by a single linear recursion (cost O(N_t K N_x))."""
    if h.fields.shape[0] < J:
        raise UsageError("direction shorter than the target horizon")
    k = h.noise_coords(traj.problem.cov)
    z = directional_history(traj, k, J, fprime)
    if not np.isfinite(z[J]).all():
        raise NumericalError("directional tangent is not finite")
    return SpectralField(traj.problem.grid, z[J])


@dataclass
class OracleResult:
    coarse: np.ndarray  # central difference at eps
    fine: np.ndarray  # central difference at eps/2
    richardson: np.ndarray
    eps: float
    inconclusive: bool = False


def _shifted_solution(traj: Trajectory, shift: np.ndarray, J: int) -> np.ndarray:
    from .solver import solve_increments

    states, divergent = solve_increments(traj.problem, (traj.dW + shift)[None, :J], traj.dt)
    return states[0, -1], bool(divergent[0])


def cameron_martin_oracle(traj: Trajectory, h: HVector, eps: float, J: int) -> OracleResult:
    """Central differences of u_J under dW -> dW +- eps k dt, Richardson-combined over (eps, eps/2)."""
    if eps <= 0:
        raise UsageError("eps must be positive")
    k = h.noise_coords(traj.problem.cov) * traj.dt
    diffs = []
    bad = False
    for e in (eps, eps / 2):
        up, b1 = _shifted_solution(traj, e * k, J)
        dn, b2 = _shifted_solution(traj, -e * k, J)
        bad = bad or b1 or b2
        diffs.append((up - dn) / (2 * e))
    rich = (4 * diffs[1] - diffs[0]) / 3
    return OracleResult(diffs[0], diffs[1], rich, eps, inconclusive=bad)


# ---------------------------------------------------------------------------
# reverse sweep


def _reverse_states(problem: Problem, states: np.ndarray, dW: np.ndarray, dt: float, stride: int):
    """Yield (j, u_j) for j = N_t-1 .. 0, recomputing inside checkpoint blocks of size ``stride``."""
    N_t = dW.shape[1]
    if stride == 1:
        for j in range(N_t - 1, -1, -1):
            yield j, states[:, j]
        return
    decay = problem.grid.decay(dt)
    for b in range(N_t // stride - 1, -1, -1):
        block = [states[:, b]]
        for r in range(stride - 1):
            block.append(step(problem, block[-1], dW[:, b * stride + r], dt, decay))
        for r in range(stride - 1, -1, -1):
            yield b * stride + r, block[r]


def checkpoint_stride(N_t: int) -> int:
    """Largest divisor of N_t not exceeding sqrt(N_t)."""
    s = max(1, int(np.sqrt(N_t)))
    while N_t % s:
        s -= 1
    return s


def adjoint_sensitivities(
    problem: Problem,
    states: np.ndarray,
    dW: np.ndarray,
    dt: float,
    targets,
    points,
    fprime=AUTO,
    stride: int = 1,
):
    """Atlas entries d[i][l](x) at chosen points by one reverse sweep per batch.

    states: (P, N_t//stride + 1, K) as returned by ``solve_increments``;
    dW: (P, N_t, M). Returns a list, one per target step J, of arrays
    (P, len(points), J, M). Equal to ``propagate_atlas(...).at(points)`` up to
    rounding, at cost O(N_t * len(points)) transforms instead of O(N_t^2 M).
    """
    grid = problem.grid
    cov = problem.cov
    targets = [int(t) for t in targets]
    if sorted(targets) != targets or len(set(targets)) != len(targets):
        raise UsageError("targets must be strictly increasing")
    P, N_t, M = dW.shape
    if targets[-1] > N_t:
        raise UsageError("target beyond the horizon")
    probe = grid.basis_at(points)  # (n, K)
    n = probe.shape[0]
    decay = grid.decay(dt)
    colsT = np.ascontiguousarray((grid.h * cov.columns).T)  # (N_x, M)
    out = [np.zeros((P, n, J, M)) for J in targets]
    W = np.zeros((P, 0, grid.K))
    active = []  # target indices, in row-block order
    for j, u in _reverse_states(problem, states, dW[:, : targets[-1]] if stride == 1 else dW, dt, stride):
        if j >= targets[-1]:
            continue
        for ti, J in enumerate(targets):
            if J == j + 1:
                W = np.concatenate([W, np.broadcast_to(probe, (P, n, grid.K))], axis=1)
                active.append(ti)
        U = u @ grid.synthesis
        c = W * decay
        cg = c @ grid.synthesis
        g = (cg * problem.diffusion.sigma(U)[:, None, :]) @ colsT
        for b, ti in enumerate(active):
            out[ti][:, :, j, :] = g[:, b * n : (b + 1) * n]
        a = tangent_coefficient(problem, U, dW[:, j], dt, fprime)
        W = c + (cg * a[:, None, :]) @ grid.analysis
    return out
