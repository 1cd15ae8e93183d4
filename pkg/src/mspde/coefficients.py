"""Dissipative drifts, diffusions, and the cutoff / Yosida drift families."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels
from .errors import NumericalError, UsageError

Array = np.ndarray

# cosine ramp width: the C1 transition of chi_n has slope pi/(2w), so w = pi/2 gives |chi'| <= 1
RAMP_WIDTH = np.pi / 2
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(48)


@dataclass(frozen=True)
class DissipativeDrift:
    name: str
    f: Callable[[Array], Array]
    f_prime: Callable[[Array], Array]
    m: float
    # set for f(x) = -scale * x|x|^(m-1); enables the compiled resolvent
    power: float | None = None
    scale: float = 1.0

    def __call__(self, x):
        return self.f(np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class Diffusion:
    name: str
    sigma: Callable[[Array], Array]
    sigma_prime: Callable[[Array], Array]
    lipschitz: float
    nonneg: bool = False

    def __call__(self, x):
        return self.sigma(np.asarray(x, dtype=np.float64))


def power_drift(m: float = 3.0, scale: float = 1.0) -> DissipativeDrift:
    """f(x) = -scale * x|x|^(m-1); m = 3 is the cubic."""
    if m < 1:
        raise UsageError("power drift needs m >= 1")

    def f(x):
        x = np.asarray(x, dtype=np.float64)
        return -scale * x * np.abs(x) ** (m - 1)

    def fp(x):
        return -scale * m * np.abs(np.asarray(x, dtype=np.float64)) ** (m - 1)

    name = "cubic" if m == 3 and scale == 1.0 else f"power(m={m:g})"
    return DissipativeDrift(name, f, fp, m, power=float(m), scale=float(scale))


def builtin_drift(name: str, m: float = 3.0, **params) -> DissipativeDrift:
    if name == "cubic":
        return power_drift(3.0)
    if name == "power":
        return power_drift(float(m), params.get("scale", 1.0))
    if name == "linear":
        return power_drift(1.0, params.get("scale", 1.0))
    if name == "zero":
        return DissipativeDrift("zero", np.zeros_like, np.zeros_like, 0.0)
    raise UsageError(f"unknown drift {name!r}")


# ---------------------------------------------------------------------------
# Yosida family


def _generic_resolvent(drift: DissipativeDrift, lam: float, x: Array) -> Array:
    fx = drift.f(x)
    lo = x - lam * np.abs(fx) - 1.0
    hi = x + lam * np.abs(fx) + 1.0
    r = x.copy()
    tol = 1e-12 * (1.0 + np.abs(x))
    for _ in range(_kernels.MAX_NEWTON_ITER):
        g = r - lam * drift.f(r) - x
        done = np.abs(g) <= tol
        if done.all():
            return r
        lo = np.where(g < 0, r, lo)
        hi = np.where(g > 0, r, hi)
        rn = r - g / (1.0 - lam * drift.f_prime(r))
        bad = (rn <= lo) | (rn >= hi) | ~np.isfinite(rn)
        r = np.where(done, r, np.where(bad, 0.5 * (lo + hi), rn))
    if not (np.abs(r - lam * drift.f(r) - x) <= tol).all():
        raise NumericalError(f"Yosida resolvent of {drift.name} did not converge")
    return r


def yosida_resolvent(drift: DissipativeDrift, lam: float, x) -> Array:
    """The unique r with r - lam f(r) = x (safeguarded Newton, bisection fallback)."""
    if lam <= 0:
        raise UsageError(f"lambda must be positive, got {lam}")
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    if drift.power is not None:
        try:
            r = _kernels.power_resolvent(x, lam, drift.power, drift.scale)
        except _kernels.ResolventDivergence as exc:
            raise NumericalError(str(exc)) from exc
    else:
        r = _generic_resolvent(drift, lam, x)
    return r[0] if scalar else r


def yosida_f(drift: DissipativeDrift, lam: float, x) -> Array:
    """f_lam(x) = f(J_lam x) = (J_lam x - x)/lam, J_lam = (I - lam f)^(-1)."""
    return drift.f(yosida_resolvent(drift, lam, x))


def yosida_f_prime(drift: DissipativeDrift, lam: float, x) -> Array:
    fp = drift.f_prime(yosida_resolvent(drift, lam, x))
    return fp / (1.0 - lam * fp)


def yosida_drift(drift: DissipativeDrift, lam: float) -> DissipativeDrift:
    if lam <= 0:
        raise UsageError(f"lambda must be positive, got {lam}")
    return DissipativeDrift(
        f"yosida({drift.name}, {lam:g})",
        lambda x: yosida_f(drift, lam, x),
        lambda x: yosida_f_prime(drift, lam, x),
        drift.m,
    )


def damped_derivative(fprime: Array, lam: float) -> Array:
    """F_lam = F / (1 - lam F) for F <= 0; bounded by min(|F|, 1/lam)."""
    return fprime / (1.0 - lam * fprime)


# ---------------------------------------------------------------------------
# cutoff family


def chi(n: float, x) -> Array:
    """C1 cosine ramp: 1 on [-n, n], 0 outside [-n-w, n+w], w = pi/2."""
    a = np.abs(np.asarray(x, dtype=np.float64))
    s = np.clip((a - n) / RAMP_WIDTH, 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * s))


def chi_prime(n: float, x) -> Array:
    x = np.asarray(x, dtype=np.float64)
    a = np.abs(x)
    s = (a - n) / RAMP_WIDTH
    inside = (s > 0) & (s < 1)
    return np.where(inside, -0.5 * np.pi / RAMP_WIDTH * np.sin(np.pi * np.clip(s, 0, 1)) * np.sign(x), 0.0)


def _cubic_band(n: float, b: Array) -> Array:
    """int_n^{n+b} 3y^2 chi_n(y) dy in closed form."""
    a = np.pi / RAMP_WIDTH
    y = n + b

    def anti(s, y):
        return y**3 / 3 + y**2 * np.sin(a * s) / a + 2 * y * np.cos(a * s) / a**2 - 2 * np.sin(a * s) / a**3

    return 3 * 0.5 * (anti(b, y) - anti(0.0, n))


def _band_quadrature(drift: DissipativeDrift, n: float, lo: Array, hi: Array) -> Array:
    mid = 0.5 * (hi + lo)
    half = 0.5 * (hi - lo)
    y = mid[..., None] + half[..., None] * _GL_NODES
    vals = drift.f_prime(y) * chi(n, y)
    return half * (vals @ _GL_WEIGHTS)


def cutoff_f(drift: DissipativeDrift, n: float, x) -> Array:
    """f_n(x) = f(0) + int_0^x f'(y) chi_n(y) dy."""
    if n < 1:
        raise UsageError(f"cutoff level must be >= 1, got {n}")
    x = np.asarray(x, dtype=np.float64)
    inner = np.clip(x, -n, n)
    out = np.array(drift.f(inner), dtype=np.float64)
    pos = x > n
    neg = x < -n
    if pos.any() or neg.any():
        b = np.minimum(np.abs(x) - n, RAMP_WIDTH)
        if drift.power == 3.0:
            band = -drift.scale * _cubic_band(n, b)
            out = out + np.where(pos, band, 0.0) - np.where(neg, band, 0.0)
        else:
            upper = _band_quadrature(drift, n, np.full_like(b, n), n + b)
            lower = _band_quadrature(drift, n, -n - b, np.full_like(b, -n))
            out = out + np.where(pos, upper, 0.0) - np.where(neg, lower, 0.0)
    return out


def cutoff_f_prime(drift: DissipativeDrift, n: float, x) -> Array:
    x = np.asarray(x, dtype=np.float64)
    return drift.f_prime(x) * chi(n, x)


def cutoff_drift(drift: DissipativeDrift, n: float) -> DissipativeDrift:
    return DissipativeDrift(
        f"cutoff({drift.name}, {n:g})",
        lambda x: cutoff_f(drift, n, x),
        lambda x: cutoff_f_prime(drift, n, x),
        drift.m,
    )


# ---------------------------------------------------------------------------
# diffusions


def builtin_sigma(tag: str, c: float = 1.0, rho: float = 0.1) -> Diffusion:
    if tag == "constant":
        return Diffusion(
            f"constant({c:g})",
            lambda x: np.full(np.shape(x), float(c)),
            lambda x: np.zeros(np.shape(x)),
            0.0,
            nonneg=c >= 0,
        )
    if tag == "bounded_smooth":
        return Diffusion(
            "bounded_smooth",
            lambda x: 1.0 + 0.5 * np.sin(x),
            lambda x: 0.5 * np.cos(x),
            0.5,
            nonneg=True,
        )
    if tag == "nonneg_smooth":
        if rho <= 0:
            raise UsageError("nonneg_smooth needs rho > 0")
        return Diffusion(
            f"nonneg_smooth({rho:g})",
            lambda x: rho * np.sqrt(1.0 + np.square(x)),
            lambda x: rho * np.asarray(x) / np.sqrt(1.0 + np.square(x)),
            rho,
            nonneg=True,
        )
    raise UsageError(f"unknown diffusion tag {tag!r}")


# ---------------------------------------------------------------------------
# invariant checks used by tests and config validation

SAMPLE_GRID = np.linspace(-10.0, 10.0, 10_000)


def is_dissipative(drift: DissipativeDrift, sample=SAMPLE_GRID, tol: float = 1e-9) -> bool:
    """(f(a) - f(b))(a - b) <= 0 on consecutive sample pairs (equivalent to monotone decrease)."""
    fx = drift.f(sample)
    return bool(np.all(np.diff(fx) * np.diff(sample) <= tol * (1.0 + np.abs(fx[1:]))))


def growth_constant(drift: DissipativeDrift, sample=SAMPLE_GRID) -> float:
    """Smallest C with |f| + |f'| <= C (1 + |x|^m) on the sample grid."""
    lhs = np.abs(drift.f(sample)) + np.abs(drift.f_prime(sample))
    return float(np.max(lhs / (1.0 + np.abs(sample) ** drift.m)))
