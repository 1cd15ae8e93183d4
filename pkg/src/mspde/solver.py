"""Exponential Euler (semigroup splitting) for du + Au dt = f(u) dt + sigma(u) B dW.

One step: u_{j+1} = S(dt)[u_j + dt f(u_j) + sigma(u_j) (B dW_j)], with f and
sigma applied pointwise on the grid and the result projected back to modes.
All routines are batched over a leading path axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .coefficients import DissipativeDrift, Diffusion
from .errors import ConfigError, NumericalError, UsageError
from .noise import CovarianceModel, path_rng, sample_increments
from .spectral import SpectralGrid

DIVERGENCE_QUOTA = 1e-3


def check_dqp(p: float, q: float, d: int = 1) -> None:
    """Reject exponents violating d/(2q) < 1/2 - 1/p."""
    lhs = d / (2.0 * q)
    rhs = 0.5 - 1.0 / p
    if not lhs < rhs:
        raise ConfigError(
            f"exponents violate d/(2q) < 1/2 - 1/p: d={d}, q={q:g}, p={p:g} gives {lhs:g} >= {rhs:g}"
        )


@dataclass(frozen=True)
class SolverConfig:
    T: float = 0.5
    N_t: int = 256
    K: int = 64
    N_x: int = 256
    M: int = 16
    p: float = 4.0
    q: float = 4.0
    seed: int = 0
    d: int = 1

    def __post_init__(self):
        if self.T <= 0 or self.N_t < 1:
            raise ConfigError("need T > 0 and N_t >= 1")
        if self.N_x < 2 * self.K:
            raise ConfigError(f"need N_x >= 2K, got N_x={self.N_x}, K={self.K}")
        check_dqp(self.p, self.q, self.d)

    @property
    def dt(self) -> float:
        return self.T / self.N_t


@dataclass
class Problem:
    """The SPDE data: discretization, covariance, coefficients and initial datum (modes)."""

    grid: SpectralGrid
    cov: CovarianceModel
    drift: DissipativeDrift
    diffusion: Diffusion
    u0: np.ndarray

    def __post_init__(self):
        self.u0 = np.asarray(self.u0, dtype=np.float64)
        if self.u0.shape != (self.grid.K,):
            raise UsageError("u0 must be K sine coefficients")
        if self.cov.N_x != self.grid.N_x:
            raise UsageError("covariance and grid disagree on N_x")

    def with_(self, **changes) -> "Problem":
        kw = dict(grid=self.grid, cov=self.cov, drift=self.drift, diffusion=self.diffusion, u0=self.u0)
        kw.update(changes)
        return Problem(**kw)


def default_u0(grid: SpectralGrid) -> np.ndarray:
    """sin(pi x), i.e. e_1 / sqrt(2)."""
    u0 = np.zeros(grid.K)
    u0[0] = 1.0 / np.sqrt(2.0)
    return u0


def step(problem: Problem, u: np.ndarray, dW: np.ndarray, dt: float, decay: np.ndarray | None = None):
    """One exponential Euler step for a batch u (..., K) with increments dW (..., M)."""
    grid = problem.grid
    if decay is None:
        decay = grid.decay(dt)
    U = u @ grid.synthesis
    forcing = dt * problem.drift.f(U) + problem.diffusion.sigma(U) * problem.cov.noise_field(dW)
    return decay * (u + forcing @ grid.analysis)


@dataclass
class Trajectory:
    problem: Problem
    u: np.ndarray  # (N_t+1, K)
    dW: np.ndarray  # (N_t, M)
    dt: float
    divergent: bool = False
    stopping_levels: dict = field(default_factory=dict)

    @property
    def N_t(self) -> int:
        return self.dW.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N_t + 1) * self.dt

    @cached_property
    def grid_values(self) -> np.ndarray:
        return self.u @ self.problem.grid.synthesis

    def stopping_time(self, n: float):
        return stopping_time(self, n)


def solve_increments(problem: Problem, dW: np.ndarray, dt: float, stride: int = 1):
    """Integrate a batch of paths. dW: (P, N_t, M).

    Returns (states, divergent) with states (P, N_t//stride + 1, K) holding
    u at steps 0, stride, 2*stride, ... and divergent a (P,) bool mask.
    Diverged paths are frozen at NaN.
    """
    dW = np.asarray(dW, dtype=np.float64)
    if dW.ndim != 3 or dW.shape[2] != problem.cov.M:
        raise UsageError(f"increments must be (P, N_t, {problem.cov.M}), got {dW.shape}")
    P, N_t, _ = dW.shape
    if N_t % stride:
        raise UsageError("stride must divide N_t")
    decay = problem.grid.decay(dt)
    states = np.empty((P, N_t // stride + 1, problem.grid.K))
    u = np.broadcast_to(problem.u0, (P, problem.grid.K)).copy()
    states[:, 0] = u
    divergent = np.zeros(P, dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(N_t):
            u = step(problem, u, dW[:, j], dt, decay)
            if (j + 1) % 16 == 0 or j + 1 == N_t:
                bad = ~np.isfinite(u).all(axis=1)
                if bad.any():
                    divergent |= bad
                    u[bad] = np.nan
            if (j + 1) % stride == 0:
                states[:, (j + 1) // stride] = u
    return states, divergent


def solve_path(problem: Problem, config: SolverConfig, path: int = 0, dW: np.ndarray | None = None) -> Trajectory:
    """Full trajectory for path ``path`` of the run seeded with ``config.seed``."""
    if dW is None:
        dW = sample_increments(path_rng(config.seed, path), config.N_t, config.dt, problem.cov.M)
    dW = np.asarray(dW, dtype=np.float64)
    if dW.shape != (config.N_t, problem.cov.M):
        raise UsageError(f"increments must be ({config.N_t}, {problem.cov.M}), got {dW.shape}")
    states, divergent = solve_increments(problem, dW[None], config.dt)
    return Trajectory(problem, states[0], dW, config.dt, bool(divergent[0]))


def stopping_time(traj: Trajectory, n: float):
    """First step j with max_x |u_j(x)| >= n, or None."""
    if n <= 0:
        raise UsageError("stopping level must be positive")
    sup = np.abs(traj.grid_values).max(axis=1)
    hits = np.flatnonzero(sup >= n)
    return int(hits[0]) if hits.size else None


def batch_increments(config: SolverConfig, M: int, paths, N_t: int | None = None) -> np.ndarray:
    """Stack per-path increment streams at resolution ``N_t`` (default config.N_t)."""
    N_t = config.N_t if N_t is None else N_t
    dt = config.T / N_t
    return np.stack([sample_increments(path_rng(config.seed, p), N_t, dt, M) for p in paths])


def check_divergence(divergent: np.ndarray, what: str = "experiment") -> None:
    rate = float(np.mean(divergent)) if divergent.size else 0.0
    if rate > DIVERGENCE_QUOTA:
        raise NumericalError(f"{what}: {int(divergent.sum())} divergent paths ({rate:.2%}) exceed the quota")


def sup_moment_estimate(problem: Problem, config: SolverConfig, p: float, n_paths: int, chunk: int = 50):
    """Monte Carlo E sup_j max_x |u_j(x)|^p with its standard error.

    Returns (mean, std_error, n_divergent).
    """
    if p < 2:
        raise UsageError("sup moment needs p >= 2")
    sups = []
    divergent = []
    for start in range(0, n_paths, chunk):
        dW = batch_increments(config, problem.cov.M, range(start, min(n_paths, start + chunk)))
        states, div = solve_increments(problem, dW, config.dt)
        grid_vals = states @ problem.grid.synthesis
        sups.append(np.abs(grid_vals).max(axis=(1, 2)))
        divergent.append(div)
    sups = np.concatenate(sups)
    divergent = np.concatenate(divergent)
    check_divergence(divergent, "sup moment")
    sample = sups[~divergent] ** p
    se = float(sample.std(ddof=1) / np.sqrt(sample.size)) if sample.size > 1 else 0.0
    return float(sample.mean()), se, int(divergent.sum())
