"""Hot elementwise kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and ``MSPDE_NUMBA`` is not set to
``0``. Both paths are always importable (``*_numpy`` / ``*_numba``) so tests
and the benchmark can compare them directly.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba as nb
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None

MAX_NEWTON_ITER = 200

USE_NUMBA = nb is not None and os.environ.get("MSPDE_NUMBA", "1") != "0"


class ResolventDivergence(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Yosida resolvent of the power drift f(r) = -r|r|^(m-1)
#
# Solves r - lam*f(r) = x, i.e. r + lam*r|r|^(m-1) = x, elementwise.
# g(r) = r + lam*r|r|^(m-1) - x has g' >= 1, so the bracket
# [x - lam|f(x)| - 1, x + lam|f(x)| + 1] always changes sign.


def power_resolvent_numpy(x, lam, m, scale=1.0):
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    fx = scale * ax**m
    lo = x - lam * fx - 1.0
    hi = x + lam * fx + 1.0
    r = x / (1.0 + lam * scale * ax ** (m - 1.0)) if m >= 1.0 else x.copy()
    tol = 1e-12 * (1.0 + ax)
    for _ in range(MAX_NEWTON_ITER):
        ar = np.abs(r)
        g = r + lam * scale * r * ar ** (m - 1.0) - x
        done = np.abs(g) <= tol
        if done.all():
            return r
        lo = np.where(g < 0.0, r, lo)
        hi = np.where(g > 0.0, r, hi)
        dg = 1.0 + lam * scale * m * ar ** (m - 1.0)
        rn = r - g / dg
        bad = (rn <= lo) | (rn >= hi) | ~np.isfinite(rn)
        rn = np.where(bad, 0.5 * (lo + hi), rn)
        r = np.where(done, r, rn)
    ar = np.abs(r)
    g = r + lam * scale * r * ar ** (m - 1.0) - x
    if not (np.abs(g) <= tol).all():
        raise ResolventDivergence("Yosida resolvent did not converge")
    return r


def _abspow(a, e):
    # a >= 0; integer exponents avoid the general pow
    if e == 2.0:
        return a * a
    if e == 1.0:
        return a
    if e == 0.0:
        return 1.0
    return a**e


def _power_resolvent_scalar(x, lam, m, scale):
    ax = abs(x)
    c = lam * scale
    fx = c * ax * _abspow(ax, m - 1.0)
    lo = x - fx - 1.0
    hi = x + fx + 1.0
    if m >= 1.0:
        r = x / (1.0 + c * _abspow(ax, m - 1.0))
    else:
        r = x
    tol = 1e-12 * (1.0 + ax)
    for _ in range(MAX_NEWTON_ITER):
        pw = _abspow(abs(r), m - 1.0)
        g = r + c * r * pw - x
        if abs(g) <= tol:
            return r, True
        if g < 0.0:
            lo = r
        else:
            hi = r
        rn = r - g / (1.0 + c * m * pw)
        if not (lo < rn < hi) or not math.isfinite(rn):
            rn = 0.5 * (lo + hi)
        r = rn
    g = r + c * r * _abspow(abs(r), m - 1.0) - x
    return r, abs(g) <= tol


def _power_resolvent_loop(x, lam, m, scale, out):
    flat_x = x.ravel()
    flat_out = out.ravel()
    ok = True
    for idx in range(flat_x.size):
        r, good = _power_resolvent_scalar(flat_x[idx], lam, m, scale)
        flat_out[idx] = r
        ok = ok and good
    return ok


# ---------------------------------------------------------------------------
# Tangent coefficient: a = dt*fprime + sprime*xi, fused


def tangent_coefficient_numpy(fprime, sprime, xi, dt):
    if fprime is None:
        return sprime * xi
    return dt * fprime + sprime * xi


def _tangent_coefficient_loop(fprime, sprime, xi, dt, out):
    fp = fprime.ravel()
    sp = sprime.ravel()
    xv = xi.ravel()
    ov = out.ravel()
    for idx in range(ov.size):
        ov[idx] = dt * fp[idx] + sp[idx] * xv[idx]


# ---------------------------------------------------------------------------
# H-norm accumulation: sum over the two trailing axes of d**2 * dt


def h_norm_sq_numpy(d, dt):
    return np.sum(d * d, axis=(-2, -1)) * dt


def _h_norm_sq_loop(d2, dt, out):
    # d2: (rows, n) contiguous
    for r in range(d2.shape[0]):
        acc = 0.0
        for c in range(d2.shape[1]):
            acc += d2[r, c] * d2[r, c]
        out[r] = acc * dt


if nb is not None:
    _abspow = nb.njit(cache=True, inline="always")(_abspow)
    _power_resolvent_scalar = nb.njit(cache=True, nogil=True)(_power_resolvent_scalar)
    _power_resolvent_loop = nb.njit(cache=True, nogil=True)(_power_resolvent_loop)
    _tangent_coefficient_loop = nb.njit(cache=True, nogil=True, fastmath=False)(
        _tangent_coefficient_loop
    )
    _h_norm_sq_loop = nb.njit(cache=True, nogil=True)(_h_norm_sq_loop)


def power_resolvent_numba(x, lam, m, scale=1.0):
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(x)
    if not _power_resolvent_loop(x, float(lam), float(m), float(scale), out):
        raise ResolventDivergence("Yosida resolvent did not converge")
    return out


def tangent_coefficient_numba(fprime, sprime, xi, dt):
    if fprime is None:
        return sprime * xi
    fprime, sprime, xi = np.broadcast_arrays(fprime, sprime, xi)
    out = np.empty(fprime.shape)
    _tangent_coefficient_loop(
        np.ascontiguousarray(fprime, dtype=np.float64),
        np.ascontiguousarray(sprime, dtype=np.float64),
        np.ascontiguousarray(xi, dtype=np.float64),
        float(dt),
        out,
    )
    return out


def h_norm_sq_numba(d, dt):
    d = np.asarray(d, dtype=np.float64)
    lead = d.shape[:-2]
    flat = np.ascontiguousarray(d.reshape(-1, d.shape[-2] * d.shape[-1]))
    out = np.empty(flat.shape[0])
    _h_norm_sq_loop(flat, float(dt), out)
    return out.reshape(lead)


if USE_NUMBA:
    power_resolvent = power_resolvent_numba
    tangent_coefficient = tangent_coefficient_numba
    h_norm_sq = h_norm_sq_numba
else:
    power_resolvent = power_resolvent_numpy
    tangent_coefficient = tangent_coefficient_numpy
    h_norm_sq = h_norm_sq_numpy


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
