import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mspde.duality import LqH, duality_map, phi_q, phi_q_diagnostics, phi_q_prime
from mspde.errors import UsageError


@pytest.mark.parametrize("q", [2.0, 4.0, 6.0])
def test_identities_on_random_fields(q, rng):
    mu = np.full(64, 1 / 64)
    for _ in range(100):
        u = rng.standard_normal((64, 5))
        d = phi_q_diagnostics(u, q, mu, n_pairs=1, rng=rng)
        assert d.nJ_rel_err < 1e-8
        assert d.pairing_rel_err < 1e-10
        assert d.second_ratio_max <= 1 + 1e-8


def test_second_derivative_bound_many_triples(rng):
    u = rng.standard_normal((40, 3))
    for q in (2.0, 4.0, 6.0):
        assert phi_q_diagnostics(u, q, n_pairs=100, rng=rng).second_ratio_max <= 1 + 1e-8


def test_indicator_field():
    u = np.zeros((50, 1))
    u[10:20] = 1.0
    d = phi_q_diagnostics(u, 4.0)
    assert d.derivative_norm == pytest.approx(4.0 * (10 / 50) ** 0.75, rel=1e-12)


def test_weighted_H_inner_product(rng):
    hw = np.array([1.0, 0.25, 4.0])
    u = rng.standard_normal((30, 3))
    d = phi_q_diagnostics(u, 4.0, hw=hw, rng=rng)
    assert d.nJ_rel_err < 1e-8 and d.pairing_rel_err < 1e-10


def test_derivative_matches_finite_difference(rng):
    space = LqH(np.full(20, 0.05))
    u = rng.standard_normal((20, 2))
    v = rng.standard_normal((20, 2))
    q, h = 4.0, 1e-6
    fd = (phi_q(space, u + h * v, q) - phi_q(space, u - h * v, q)) / (2 * h)
    assert fd == pytest.approx(space.pair(phi_q_prime(space, u, q), v), rel=1e-7)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), q=st.floats(2.0, 8.0))
def test_duality_map_pairing(seed, q):
    r = np.random.default_rng(seed)
    u = r.standard_normal((16, 2))
    space = LqH(np.full(16, 1 / 16))
    assert space.pair(u, duality_map(space, u, q)) == pytest.approx(space.norm(u, q) ** 2, rel=1e-10)


def test_rejects_small_q():
    with pytest.raises(UsageError):
        phi_q_diagnostics(np.ones(4), 1.5)
