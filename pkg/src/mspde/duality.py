"""Phi_q(u) = ||u||^q on L^q(mu; H), its derivatives and the duality map.

A field u is an array (n, m): n quadrature nodes with weights ``mu`` and an
m-dimensional H value at each node, with H inner product weighted by ``hw``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError


@dataclass
class DualityDiag:
    q: float
    value: float
    derivative: np.ndarray  # Phi_q'(u) as an element of L^{q'}(mu; H)
    derivative_norm: float  # ||Phi_q'(u)||_{q'}
    derivative_norm_expected: float  # q ||u||_q^{q-1}
    pairing: float  # <u, J(u)>
    norm_sq: float  # ||u||_q^2
    second_ratio_max: float  # max |Phi''(u)(v,w)| / (q(q-1)||u||^{q-2}||v|| ||w||)

    @property
    def nJ_rel_err(self) -> float:
        return abs(self.derivative_norm - self.derivative_norm_expected) / self.derivative_norm_expected

    @property
    def pairing_rel_err(self) -> float:
        return abs(self.pairing - self.norm_sq) / self.norm_sq


class LqH:
    def __init__(self, mu, hw=None):
        self.mu = np.asarray(mu, dtype=np.float64)
        self.hw = None if hw is None else np.asarray(hw, dtype=np.float64)

    def ip_H(self, a, b):
        return np.sum(a * b if self.hw is None else a * b * self.hw, axis=-1)

    def pointwise(self, u):
        return np.sqrt(np.maximum(self.ip_H(u, u), 0.0))

    def norm(self, u, q):
        return float(np.sum(self.mu * self.pointwise(u) ** q) ** (1.0 / q))

    def pair(self, u, v):
        """Duality pairing of L^q(mu;H) with L^{q'}(mu;H)."""
        return float(np.sum(self.mu * self.ip_H(u, v)))


def phi_q(space: LqH, u, q) -> float:
    return float(np.sum(space.mu * space.pointwise(u) ** q))


def duality_map(space: LqH, u, q) -> np.ndarray:
    """J(u) = ||u||^{2-q} |u(.)|_H^{q-2} u(.)."""
    nu = space.norm(u, q)
    return nu ** (2 - q) * (space.pointwise(u) ** (q - 2))[:, None] * u


def phi_q_prime(space: LqH, u, q) -> np.ndarray:
    """q |u(.)|_H^{q-2} u(.)."""
    return q * (space.pointwise(u) ** (q - 2))[:, None] * u


def phi_q_second(space: LqH, u, q, v, w) -> float:
    pu = space.pointwise(u)
    first = q * np.sum(space.mu * pu ** (q - 2) * space.ip_H(v, w))
    with np.errstate(divide="ignore", invalid="ignore"):
        weight = np.where(pu > 0, pu ** (q - 4), 0.0)
    second = q * (q - 2) * np.sum(space.mu * weight * space.ip_H(u, v) * space.ip_H(u, w))
    return float(first + second)


def phi_q_diagnostics(u, q, mu=None, hw=None, n_pairs: int = 100, rng=None) -> DualityDiag:
    """Evaluate the first-derivative identity and the second-derivative bound."""
    if q < 2:
        raise UsageError(f"q must be >= 2, got {q}")
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 1:
        u = u[:, None]
    mu = np.full(u.shape[0], 1.0 / u.shape[0]) if mu is None else mu
    space = LqH(mu, hw)
    qc = q / (q - 1)
    nu = space.norm(u, q)
    dphi = phi_q_prime(space, u, q)
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    for _ in range(n_pairs):
        v = rng.standard_normal(u.shape)
        w = rng.standard_normal(u.shape)
        bound = q * (q - 1) * nu ** (q - 2) * space.norm(v, q) * space.norm(w, q)
        worst = max(worst, abs(phi_q_second(space, u, q, v, w)) / bound)
    return DualityDiag(
        q=q,
        value=phi_q(space, u, q),
        derivative=dphi,
        derivative_norm=space.norm(dphi, qc),
        derivative_norm_expected=q * nu ** (q - 1),
        pairing=space.pair(u, duality_map(space, u, q)),
        norm_sq=nu**2,
        second_ratio_max=worst,
    )
