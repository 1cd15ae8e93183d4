"""Dirichlet Laplacian on (0, 1) in the sine basis.

Fields are stored as K sine coefficients; the grid view lives on the
N_x interior points x_j = j/(N_x+1). Grid <-> mode transforms are dense
matrix products (faster than a DST of length N_x+1 at these sizes).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DomainError, UsageError

SQRT2 = np.sqrt(2.0)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


class SpectralGrid:
    """Sine basis e_k(x) = sqrt(2) sin(k pi x), k = 1..K, tabulated on N_x points."""

    def __init__(self, K: int, N_x: int):
        if K < 1 or N_x < 1:
            raise UsageError("K and N_x must be positive")
        if N_x < 2 * K:
            raise UsageError(f"need N_x >= 2K, got N_x={N_x}, K={K}")
        self.K = int(K)
        self.N_x = int(N_x)
        self.h = 1.0 / (self.N_x + 1)
        self.x = _frozen(np.arange(1, self.N_x + 1) * self.h)
        self.k = _frozen(np.arange(1, self.K + 1, dtype=np.float64))
        self.eigenvalues = _frozen((self.k * np.pi) ** 2)
        # (N_x, K); coeffs @ basis.T -> grid, values @ analysis -> coeffs
        self.basis = _frozen(self.basis_at(self.x))
        self.analysis = _frozen(self.h * self.basis)
        self.synthesis = _frozen(np.ascontiguousarray(self.basis.T))

    def __repr__(self) -> str:
        return f"SpectralGrid(K={self.K}, N_x={self.N_x})"

    def basis_at(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return SQRT2 * np.sin(np.pi * np.outer(x, self.k))

    def to_grid(self, coeffs: np.ndarray) -> np.ndarray:
        return np.asarray(coeffs) @ self.synthesis

    def to_modes(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        if values.shape[-1] != self.N_x:
            raise UsageError(f"grid field has {values.shape[-1]} points, expected {self.N_x}")
        return values @ self.analysis

    def evaluate(self, coeffs: np.ndarray, x) -> np.ndarray:
        """Evaluate the sine series at arbitrary points in [0, 1]."""
        return np.asarray(coeffs) @ self.basis_at(x).T

    def decay(self, t: float) -> np.ndarray:
        if t < 0:
            raise DomainError(f"semigroup time must be nonnegative, got {t}")
        return np.exp(-self.eigenvalues * t)

    def inner(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Trapezoidal L2 inner product on the grid (boundary values are zero)."""
        return self.h * np.sum(np.asarray(a) * np.asarray(b), axis=-1)

    def lq_norm(self, values: np.ndarray, q: float) -> np.ndarray:
        values = np.abs(np.asarray(values))
        if np.isinf(q):
            return values.max(axis=-1)
        return (self.h * np.sum(values**q, axis=-1)) ** (1.0 / q)


@dataclass
class SpectralField:
    grid: SpectralGrid
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.shape != (self.grid.K,):
            raise UsageError(f"expected {self.grid.K} coefficients, got shape {self.coeffs.shape}")

    @classmethod
    def from_grid(cls, grid: SpectralGrid, values) -> "SpectralField":
        return cls(grid, grid.to_modes(values))

    @classmethod
    def from_function(cls, grid: SpectralGrid, fn) -> "SpectralField":
        return cls.from_grid(grid, fn(grid.x))

    @cached_property
    def values(self) -> np.ndarray:
        return _frozen(self.grid.to_grid(self.coeffs))

    def __call__(self, x) -> np.ndarray:
        return self.grid.evaluate(self.coeffs, x)


def _coeffs(phi):
    return phi.coeffs if isinstance(phi, SpectralField) else np.asarray(phi, dtype=np.float64)


def _wrap(phi, coeffs):
    return SpectralField(phi.grid, coeffs) if isinstance(phi, SpectralField) else coeffs


def semigroup_apply(grid: SpectralGrid, t: float, phi):
    """S(t) phi: multiply mode k by exp(-(k pi)^2 t). Accepts a field or raw coefficients."""
    return _wrap(phi, _coeffs(phi) * grid.decay(t))


def kernel_tail_bound(grid: SpectralGrid, t: float, extra_modes: int = 4096) -> float:
    """tol_K(t) = 2 sum_{k>K} exp(-(k pi)^2 t), the documented kernel positivity slack."""
    if t <= 0:
        raise DomainError("tail bound needs t > 0")
    k = np.arange(grid.K + 1, grid.K + 1 + extra_modes, dtype=np.float64)
    return float(2.0 * np.sum(np.exp(-((k * np.pi) ** 2) * t)))


def heat_kernel(grid: SpectralGrid, t: float, x, y) -> np.ndarray:
    """Truncated Dirichlet heat kernel sum_{k<=K} exp(-lambda_k t) e_k(x) e_k(y).

    Broadcasts to an (len(x), len(y)) table. Nonnegative up to ``kernel_tail_bound``.
    Summed elementwise (not by BLAS) so that K_t(x, y) == K_t(y, x) bit for bit.
    """
    if t <= 0:
        raise DomainError(f"heat kernel is singular at t <= 0, got t={t}")
    ex = grid.basis_at(x)
    ey = grid.basis_at(y)
    return np.sum(ex[:, None, :] * ey[None, :, :] * grid.decay(t), axis=-1)


def resolvent_smooth(grid: SpectralGrid, eps: float, alpha: float, phi):
    """(I + eps A)^(-alpha) phi."""
    if eps < 0 or alpha < 0:
        raise DomainError("resolvent smoothing needs eps >= 0 and alpha >= 0")
    return _wrap(phi, _coeffs(phi) * (1.0 + eps * grid.eigenvalues) ** (-alpha))


def det_convolve(grid: SpectralGrid, g: np.ndarray, dt: float, n_steps: int | None = None) -> np.ndarray:
    """Left-endpoint deterministic convolution (S*g)_j = sum_{i<j} dt S((j-i)dt) g_i.

    ``g`` has shape (N_t, K); returns (N_t+1, K) with row 0 equal to zero, via
    (S*g)_{j+1} = S(dt)[(S*g)_j + dt g_j].
    """
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2 or g.shape[1] != grid.K:
        raise UsageError(f"expected a (N_t, {grid.K}) sequence, got {g.shape}")
    if n_steps is not None and n_steps != g.shape[0]:
        raise UsageError(f"sequence has {g.shape[0]} steps, grid has {n_steps}")
    decay = grid.decay(dt)
    out = np.zeros((g.shape[0] + 1, grid.K))
    for j in range(g.shape[0]):
        out[j + 1] = decay * (out[j] + dt * g[j])
    return out
