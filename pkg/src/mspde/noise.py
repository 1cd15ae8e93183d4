"""Covariance operator Q = BB*, its square root, Wiener increments and the H geometry.

U = L2(0,1) and B = Q^(1/2). The noise driving one step is
B dW = sum_l sqrt(q_l) dW_l g_l, with g_l orthonormal in the grid L2 product.
``columns`` holds the grid fields B g_l; replacing them (``smoothed``) swaps B
for B_eps = (I + eps A)^(-alpha) B without touching the eigenpairs of Q.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NumericalError, UsageError
from .spectral import SpectralGrid, resolvent_smooth

PSD_TOL = 1e-10


@dataclass(frozen=True)
class CovarianceModel:
    variant: str
    q: np.ndarray
    modes: np.ndarray = field(repr=False)  # (M, N_x) grid values of g_l
    h: float
    positivity_preserving: bool = False
    matrix: np.ndarray | None = field(default=None, repr=False)
    clamp: float = 0.0
    tail: float = 0.0
    columns: np.ndarray | None = field(default=None, repr=False)  # (M, N_x) grid values of B g_l

    def __post_init__(self):
        if self.columns is None:
            object.__setattr__(self, "columns", np.sqrt(self.q)[:, None] * self.modes)

    @property
    def M(self) -> int:
        return self.q.shape[0]

    @property
    def N_x(self) -> int:
        return self.modes.shape[1]

    @property
    def trace(self) -> float:
        return float(np.sum(self.q))

    def _check(self, phi):
        phi = np.asarray(phi, dtype=np.float64)
        if phi.shape[-1] != self.N_x:
            raise UsageError(f"field has {phi.shape[-1]} grid points, covariance has {self.N_x}")
        return phi

    def coords(self, phi) -> np.ndarray:
        """<phi, g_l> for l = 1..M (trailing axis)."""
        return self.h * (self._check(phi) @ self.modes.T)

    def apply_Q(self, phi) -> np.ndarray:
        return (self.coords(phi) * self.q) @ self.modes

    def apply_Qhalf(self, phi) -> np.ndarray:
        return (self.coords(phi) * np.sqrt(self.q)) @ self.modes

    def noise_field(self, dW) -> np.ndarray:
        """Grid values of B dW for increment rows dW[..., l]."""
        return np.asarray(dW) @ self.columns

    def column_sup_norms(self) -> np.ndarray:
        return np.abs(self.columns).max(axis=1)

    def grid_matrix(self) -> np.ndarray:
        """Finite-rank Q as an (N_x, N_x) grid operator acting by matrix-vector product."""
        return self.h * (self.modes.T * self.q) @ self.modes

    def smoothed(self, grid: SpectralGrid, eps: float, alpha: float) -> "CovarianceModel":
        """Same Q geometry with B replaced by (I + eps A)^(-alpha) B."""
        if eps == 0:
            return self
        base = np.sqrt(self.q)[:, None] * self.modes
        cols = grid.to_grid(resolvent_smooth(grid, eps, alpha, grid.to_modes(base)))
        return replace(self, columns=cols)


def build_diagonal(grid: SpectralGrid, M: int, s: float = 2.0, q=None) -> CovarianceModel:
    """Q diagonal on the sine basis, q_l = l^(-s) unless explicit ``q`` is given."""
    if M < 1 or M > grid.K:
        raise UsageError(f"diagonal covariance needs 1 <= M <= K, got M={M}, K={grid.K}")
    if q is None:
        q = np.arange(1, M + 1, dtype=np.float64) ** (-s)
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (M,):
        raise UsageError("q must have length M")
    if np.any(q < -PSD_TOL):
        raise UsageError("covariance eigenvalues must be nonnegative")
    keep = q > 0
    modes = np.ascontiguousarray(grid.basis[:, :M].T[keep])
    tail = float(np.sum(np.arange(M + 1, 10**5, dtype=np.float64) ** (-s))) if s > 1 else float("inf")
    return CovarianceModel("diagonal", q[keep].copy(), modes, grid.h, tail=tail)


def build_positivity_preserving(grid: SpectralGrid, ell: float, c: float, M: int) -> CovarianceModel:
    """Gaussian-kernel covariance kappa(x, y) = c exp(-(x-y)^2 / (2 ell^2)).

    The grid matrix Q_jk = h kappa(x_j, x_k) has nonnegative entries, which on
    the grid is exactly the positivity-preserving property.
    """
    if ell <= 0 or c <= 0:
        raise UsageError("kernel covariance needs ell > 0 and c > 0")
    if M < 1 or M > grid.N_x:
        raise UsageError(f"need 1 <= M <= N_x, got M={M}")
    x = grid.x
    matrix = grid.h * c * np.exp(-((x[:, None] - x[None, :]) ** 2) / (2.0 * ell**2))
    w, v = np.linalg.eigh(matrix)
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    clamp = float(max(0.0, -w.min()))
    if clamp > 1e-8 * c:
        raise NumericalError(f"kernel covariance is not PSD after discretization (clamp {clamp:.3e})")
    w = np.where(w < 0, 0.0, w)
    keep = np.flatnonzero(w[:M] > PSD_TOL * c)
    q = w[keep]
    modes = v[:, keep].T / np.sqrt(grid.h)
    # fix eigenvector signs so the first nonnegligible entry is positive
    pivots = np.argmax(np.abs(modes) > 1e-8 * np.abs(modes).max(axis=1, keepdims=True), axis=1)
    signs = np.sign(modes[np.arange(len(q)), pivots])
    modes = np.ascontiguousarray(modes * signs[:, None])
    tail = float(np.sum(w[M:]))
    return CovarianceModel(
        "kernel", q, modes, grid.h, positivity_preserving=True, matrix=matrix, clamp=clamp, tail=tail
    )


def path_rng(seed: int, path: int) -> np.random.Generator:
    """Independent, named stream for path ``path`` of a run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(path),)))


def sample_increments(rng: np.random.Generator, N_t: int, dt: float, M: int) -> np.ndarray:
    """i.i.d. N(0, dt) increments, shape (N_t, M)."""
    if dt <= 0:
        raise UsageError("dt must be positive")
    return rng.standard_normal((N_t, M)) * np.sqrt(dt)


def coarsen_increments(dW: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive groups of ``factor`` steps (common-noise coarse path)."""
    dW = np.asarray(dW)
    n = dW.shape[-2]
    if n % factor:
        raise UsageError(f"{n} steps not divisible by {factor}")
    return dW.reshape(*dW.shape[:-2], n // factor, factor, dW.shape[-1]).sum(axis=-2)


@dataclass
class HVector:
    """Element of discretized H = L2(0,T; L2_Q): one grid field per time step."""

    fields: np.ndarray  # (N_t, N_x)
    dt: float

    def __post_init__(self):
        self.fields = np.asarray(self.fields, dtype=np.float64)
        if self.fields.ndim != 2:
            raise UsageError("HVector fields must be (N_t, N_x)")

    @classmethod
    def from_coords(cls, cov: CovarianceModel, coords: np.ndarray, dt: float) -> "HVector":
        return cls(np.asarray(coords) @ cov.modes, dt)

    def noise_coords(self, cov: CovarianceModel) -> np.ndarray:
        """U-coordinates sqrt(q_l) <h_i, g_l>, i.e. Q^(1/2) h in the noise basis."""
        return cov.coords(self.fields) * np.sqrt(cov.q)


def ip_H(h: HVector, g: HVector, cov: CovarianceModel) -> float:
    """sum_i dt <Q h_i, g_i>."""
    if h.fields.shape != g.fields.shape or h.dt != g.dt:
        raise UsageError("H vectors live on different grids")
    return float(h.dt * np.sum(cov.coords(h.fields) * cov.q * cov.coords(g.fields)))
