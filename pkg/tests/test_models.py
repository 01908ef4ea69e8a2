import numpy as np
import pytest
from scipy.special import expit

from mrconformal.data import Dataset, ModelSpec
from mrconformal.exceptions import FitError
from mrconformal.models import (
    OutcomeModel,
    draw_imputations,
    fit_outcome,
    fit_propensity,
    per_model_estimate,
)
from mrconformal.simulation import BETA0, generate_data

# 0.5 * expit(3.5) + 0.5 * expit(-1.5)
OBSERVED_FRACTION = 0.5765566465275


def test_intercept_only_propensity_is_logit_of_rate():
    r = np.array([1, 0] * 6)
    ds = Dataset(np.zeros((12, 1)), np.where(r == 1, 1.0, np.nan), r)
    pm = fit_propensity(ds, None, ModelSpec("propensity", ()))
    np.testing.assert_allclose(pm.coef, [0.0], atol=1e-12)


@pytest.fixture(scope="module")
def big_a():
    return generate_data(50000, "A", 99)


def test_propensity_recovers_generating_coefficients(big_a):
    pm = fit_propensity(big_a, None, ModelSpec("propensity", (1,)))
    np.testing.assert_allclose(pm.coef, [3.5, -5.0], atol=0.1)
    # score equations hold at the returned coefficients
    X = pm.spec.design(big_a.x)
    grad = X.T @ (big_a.r - expit(X @ pm.coef))
    assert np.linalg.norm(grad) <= 1e-8
    assert abs(pm.predict(big_a.x).mean() - OBSERVED_FRACTION) < 0.01
    p = pm.predict(big_a.x)
    assert np.all((p > 0) & (p < 1))


def test_propensity_separation_and_single_class():
    x = np.arange(20.0)
    r = (x > 9.5).astype(int)
    ds = Dataset(x, np.where(r == 1, 1.0, np.nan), r)
    with pytest.raises(FitError, match="separation"):
        fit_propensity(ds, None, ModelSpec("propensity", (0,)))
    ds1 = Dataset(x, x, np.ones(20))
    with pytest.raises(FitError, match="single value"):
        fit_propensity(ds1, None, ModelSpec("propensity", (0,)))


def test_quasi_separation_still_fits():
    # every x=0 row observed, x=1 rows mixed: the x coefficient has no finite MLE
    x = np.array([0.0] * 10 + [1.0] * 10)
    r = np.array([1] * 10 + [1, 0] * 5)
    ds = Dataset(x, np.where(r == 1, 1.0, np.nan), r)
    pm = fit_propensity(ds, None, ModelSpec("propensity", (0,)))
    p = pm.predict(x)
    assert p[:10].min() > 1 - 1e-6
    np.testing.assert_allclose(p[10:], 0.5, atol=1e-8)


def test_propensity_singular_information():
    x = np.column_stack([np.arange(10.0), 2 * np.arange(10.0)])
    r = np.array([1, 0, 1, 1, 0, 1, 0, 1, 1, 0])
    ds = Dataset(x, np.where(r == 1, 1.0, np.nan), r)
    with pytest.raises(FitError):
        fit_propensity(ds, None, ModelSpec("propensity", (0, 1)))


def test_outcome_noiseless_line():
    x = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
    ds = Dataset(x, 1 + 2 * x, np.ones(5))
    om = fit_outcome(ds, None, ModelSpec("outcome", (0,)))
    np.testing.assert_allclose(om.coef, [1.0, 2.0], atol=1e-12)
    assert om.sigma == pytest.approx(0.0, abs=1e-12)


def test_outcome_recovers_beta0(big_a):
    om = fit_outcome(big_a, None, ModelSpec("outcome", (0, 1, 2, 3)))
    np.testing.assert_allclose(om.coef, BETA0, atol=0.05)


def test_outcome_matches_normal_equations_oracle():
    x = np.array([[0.3, 1.0], [1.2, 0.0], [2.5, 1.0], [3.1, 0.0], [4.4, 1.0], [5.0, 0.0], [9.0, 1.0]])
    y = np.array([1.1, 2.3, 2.9, 4.8, 5.2, 6.1, np.nan])
    r = np.array([1, 1, 1, 1, 1, 1, 0])
    ds = Dataset(x, y, r)
    om = fit_outcome(ds, None, ModelSpec("outcome", (0, 1)))
    X = np.column_stack([np.ones(6), x[:6]])
    oracle = np.linalg.solve(X.T @ X, X.T @ y[:6])
    np.testing.assert_allclose(om.coef, oracle, atol=1e-10)
    resid = y[:6] - X @ om.coef
    assert np.max(np.abs(X.T @ resid)) <= 1e-8 * np.abs(X).sum()
    assert om.sigma == pytest.approx(np.sqrt(resid @ resid / 6), rel=1e-12)


def test_outcome_rank_deficiency_names_columns():
    x = np.column_stack([np.arange(8.0), 3 * np.arange(8.0)])
    ds = Dataset(x, np.arange(8.0), np.ones(8), ("a", "b"))
    with pytest.raises(FitError, match="collinear columns: (a|b)"):
        fit_outcome(ds, None, ModelSpec("outcome", (0, 1)))


def test_outcome_too_few_complete_cases():
    ds = Dataset(np.arange(4.0), [1.0, 2.0, np.nan, np.nan], [1, 1, 0, 0])
    with pytest.raises(FitError):
        fit_outcome(ds, None, ModelSpec("outcome", (0,)))


def _om(coef, sigma):
    return OutcomeModel(ModelSpec("outcome", (0,)), np.asarray(coef, float), sigma)


def test_draws_degenerate_when_sigma_zero():
    ds = Dataset(np.arange(5.0), np.zeros(5), np.ones(5))
    dr = draw_imputations(_om([1.0, 2.0], 0.0), ds, None, T=7, seed=1)
    np.testing.assert_array_equal(dr.values, np.tile(1 + 2 * np.arange(5.0), (7, 1)))


def test_draw_mean_clt_bound():
    ds = Dataset(np.array([2.0]), [0.0], [1])
    T, sigma = 100000, 1.7
    dr = draw_imputations(_om([1.0, 2.0], sigma), ds, None, T=T, seed=3)
    assert abs(dr.values.mean() - 5.0) <= 4 * sigma / np.sqrt(T)
    assert abs(dr.values.var() - sigma**2) <= 4 * sigma**2 * np.sqrt(2 / T)


def test_draws_deterministic_and_validate_T():
    ds = Dataset(np.arange(5.0), np.zeros(5), np.ones(5))
    a = draw_imputations(_om([1.0, 2.0], 1.0), ds, [0, 3], T=4, seed=11)
    b = draw_imputations(_om([1.0, 2.0], 1.0), ds, [0, 3], T=4, seed=11)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.values.shape == (4, 2)
    with pytest.raises(ValueError):
        draw_imputations(_om([1.0, 2.0], 1.0), ds, None, T=0)


def test_per_model_estimate_without_missingness_equals_fit_outcome():
    ds = generate_data(300, "A", 4)
    full = Dataset(ds.x, ds.x @ BETA0[1:] + np.random.default_rng(0).standard_normal(300), np.ones(300))
    om = fit_outcome(full, None, ModelSpec("outcome", (0, 1, 2, 3)))
    dr = draw_imputations(om, full, None, T=5, seed=1)
    est = per_model_estimate(full, None, dr)
    np.testing.assert_allclose(est.mu_k, om.coef, atol=1e-10)


def test_per_model_estimate_sigma_zero_true_model():
    ds = generate_data(400, "A", 5)
    truth = OutcomeModel(ModelSpec("outcome", (0, 1, 2, 3)), BETA0.copy(), 0.0)
    dr = draw_imputations(truth, ds, None, T=3, seed=2)
    est = per_model_estimate(ds, None, dr)
    completed = np.where(ds.r == 1, ds.y, ds.x @ BETA0[1:] + BETA0[0])
    X = np.column_stack([np.ones(ds.n), ds.x])
    np.testing.assert_allclose(est.mu_k, np.linalg.lstsq(X, completed, rcond=None)[0], atol=1e-10)


def test_per_model_estimate_matches_descent_on_stacked_objective():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(10, 1))
    y = 1 + 0.5 * x[:, 0] + rng.normal(size=10)
    r = np.array([1, 1, 0, 1, 0, 1, 1, 0, 1, 1])
    ds = Dataset(x, y, r)
    om = fit_outcome(ds, None, ModelSpec("outcome", (0,)))
    dr = draw_imputations(om, ds, None, T=6, seed=9)
    est = per_model_estimate(ds, None, dr, spec=ModelSpec("outcome", (0,)))

    # gradient descent on sum_obs (y - mu)^2 + sum_mis T^-1 sum_t (Y^t - mu)^2
    X = np.column_stack([np.ones(10), x[:, 0]])
    obs, mis = r == 1, r == 0
    Yt = dr.values[:, mis]
    b = np.zeros(2)
    L = 2 * np.linalg.eigvalsh(X.T @ X).max()
    for _ in range(20000):
        grad = -2 * X[obs].T @ (y[obs] - X[obs] @ b)
        grad += -2 * X[mis].T @ (Yt - X[mis] @ b).mean(axis=0)
        b -= grad / L
    np.testing.assert_allclose(est.mu_k, b, atol=1e-6)
