import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mspde import _kernels

needs_numba = pytest.mark.skipif(_kernels.nb is None, reason="numba not installed")

finite = st.floats(-30, 30, allow_nan=False)


@needs_numba
@settings(max_examples=50, deadline=None)
@given(x=arrays(np.float64, st.integers(1, 40), elements=finite),
       lam=st.floats(1e-3, 5.0), m=st.sampled_from([1.0, 2.0, 3.0, 4.5]))
def test_resolvent_paths_agree(x, lam, m):
    a = _kernels.power_resolvent_numpy(x, lam, m)
    b = _kernels.power_resolvent_numba(x, lam, m)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


@needs_numba
def test_tangent_coefficient_paths_agree(rng):
    fp, sp, xi = rng.standard_normal((3, 7, 33))
    assert np.array_equal(_kernels.tangent_coefficient_numpy(fp, sp, xi, 0.01),
                          _kernels.tangent_coefficient_numba(fp, sp, xi, 0.01))
    assert np.array_equal(_kernels.tangent_coefficient_numba(None, sp, xi, 0.01), sp * xi)


@needs_numba
def test_h_norm_paths_agree(rng):
    d = rng.standard_normal((2, 5, 40, 16))
    assert np.allclose(_kernels.h_norm_sq_numpy(d, 0.1), _kernels.h_norm_sq_numba(d, 0.1), rtol=1e-13)


def test_env_flag_selects_numpy():
    code = "from mspde import _kernels; print(_kernels.backend())"
    env = dict(os.environ, MSPDE_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_resolvent_divergence_reported():
    with pytest.raises(_kernels.ResolventDivergence):
        _kernels.power_resolvent_numpy(np.array([np.nan]), 0.1, 3.0)
