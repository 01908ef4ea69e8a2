import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mrconformal.quantile import (
    check_loss,
    conformal_level,
    empirical_quantile,
    psi,
    weighted_quantile,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_check_loss_and_psi_values():
    np.testing.assert_allclose(check_loss(np.array([-2.0, 0.0, 3.0]), 0.9), [0.2, 0.0, 2.7])
    np.testing.assert_allclose(psi(np.array([-1e-300, 0.0, 1.0]), 0.9), [-0.1, 0.9, 0.9], rtol=1e-14)


def test_empirical_quantile_on_one_to_ten():
    assert empirical_quantile(np.arange(1.0, 11.0), 0.9) == 9.0
    assert empirical_quantile(np.arange(1.0, 11.0), 0.91) == 10.0
    assert empirical_quantile(np.arange(1.0, 11.0), 0.05) == 1.0


@settings(max_examples=200, deadline=None)
@given(arrays(float, st.integers(1, 40), elements=finite), st.floats(0.01, 0.99))
def test_weighted_quantile_uniform_equals_empirical(vals, tau):
    w = np.ones(vals.size)
    assert weighted_quantile(vals, w, tau) == empirical_quantile(vals, tau)


@settings(max_examples=200, deadline=None)
@given(
    arrays(float, st.integers(1, 30), elements=finite),
    st.floats(0.01, 0.99),
    st.data(),
)
def test_weighted_quantile_is_generalized_inverse(vals, tau, data):
    w = data.draw(arrays(float, vals.size, elements=st.floats(0.01, 10.0)))
    q = weighted_quantile(vals, w, tau)
    p = w / w.sum()
    assert q in vals
    assert p[vals <= q].sum() >= tau - 1e-9
    # nothing smaller reaches tau
    smaller = vals[vals < q]
    if smaller.size:
        assert p[vals <= smaller.max()].sum() < tau + 1e-9


@settings(max_examples=100, deadline=None)
@given(arrays(float, st.integers(2, 30), elements=finite), st.floats(0.05, 0.95))
def test_empirical_quantile_minimises_check_loss(vals, tau):
    q = empirical_quantile(vals, tau)
    loss = lambda c: check_loss(vals - c, tau).sum()
    grid = np.concatenate([vals, vals + 1e-3, vals - 1e-3])
    assert loss(q) <= min(loss(c) for c in grid) + 1e-7 * (1 + np.abs(vals).sum())


def test_conformal_level():
    assert conformal_level(0.9, 99) == pytest.approx(90 / 99)
    assert conformal_level(0.9, 5) < 1.0
    assert conformal_level(0.5, 9) == pytest.approx(5 / 9)


def test_quantile_input_errors():
    with pytest.raises(ValueError):
        empirical_quantile(np.array([]), 0.5)
    with pytest.raises(ValueError):
        weighted_quantile(np.array([1.0]), np.array([-1.0]), 0.5)
