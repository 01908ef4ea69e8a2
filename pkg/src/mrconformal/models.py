"""Working propensity and outcome models.

Propensity models are logistic regressions fitted by IRLS; outcome models are
Gaussian linear regressions fitted on complete cases. Outcome models also
supply Monte Carlo imputations used both to build per-model estimators and,
later, imputed conformity scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import expit, log_expit

from .data import Dataset, ModelSpec, as_index
from .exceptions import FitError

__all__ = [
    "PropensityModel",
    "OutcomeModel",
    "ImputationDraws",
    "PerModelEstimate",
    "fit_propensity",
    "fit_outcome",
    "draw_imputations",
    "per_model_estimate",
    "full_spec",
    "weighted_lstsq",
]


@dataclass(frozen=True)
class PropensityModel:
    spec: ModelSpec
    coef: np.ndarray
    iterations: int = 0
    fitted: bool = True

    def predict(self, x) -> np.ndarray:
        """P(R = 1 | x)."""
        return expit(self.spec.design(x) @ self.coef)


@dataclass(frozen=True)
class OutcomeModel:
    spec: ModelSpec
    coef: np.ndarray
    sigma: float

    def predict(self, x) -> np.ndarray:
        return self.spec.design(x) @ self.coef


@dataclass(frozen=True)
class ImputationDraws:
    """``values[t, i]`` is draw ``t`` for row ``target_idx[i]``."""

    values: np.ndarray
    target_idx: np.ndarray
    model_index: int = 0
    seed: int = 0

    @property
    def T(self) -> int:
        return self.values.shape[0]

    def for_rows(self, idx) -> np.ndarray:
        """Columns of ``values`` for dataset rows ``idx`` (T, len(idx))."""
        pos = {int(j): k for k, j in enumerate(self.target_idx)}
        try:
            cols = [pos[int(i)] for i in idx]
        except KeyError as e:
            raise ValueError(f"no imputation draws for row {e.args[0]}") from None
        return self.values[:, cols]


@dataclass(frozen=True)
class PerModelEstimate:
    spec: ModelSpec
    mu_k: np.ndarray

    def predict(self, x) -> np.ndarray:
        return self.spec.design(x) @ self.mu_k


def full_spec(ds: Dataset, kind: str = "outcome") -> ModelSpec:
    """Intercept plus every covariate."""
    return ModelSpec(kind, tuple(range(ds.p)), name="full")


def _loglik(X, r, coef):
    eta = X @ coef
    return float(np.sum(r * log_expit(eta) + (1 - r) * log_expit(-eta)))


SEPARATION_ETA = 15.0


def fit_propensity(
    ds: Dataset,
    idx,
    spec: ModelSpec,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> PropensityModel:
    """Logistic regression of ``r`` on the spec's columns by IRLS.

    Each Newton step is halved until the log-likelihood does not decrease.
    Converges when the score vector has Euclidean norm ``<= tol``.

    Raises
    ------
    FitError
        If only one class of ``r`` is present, the information matrix is
        singular, or the coefficients diverge (separation).
    """
    spec.validate(ds)
    idx = as_index(idx, ds.n)
    if idx.size == 0:
        raise FitError("empty index set")
    X = spec.design(ds.x[idx])
    r = ds.r[idx].astype(float)
    if r.min() == r.max():
        raise FitError("r takes a single value on these rows; propensity model not identifiable")

    coef = np.zeros(X.shape[1])
    ll = _loglik(X, r, coef)
    for it in range(1, max_iter + 1):
        p = expit(X @ coef)
        grad = X.T @ (r - p)
        if np.linalg.norm(grad) <= tol:
            _check_separation(X, coef)
            return PropensityModel(spec, coef, iterations=it - 1)
        W = p * (1 - p)
        info = X.T @ (X * W[:, None])
        try:
            step = scipy.linalg.solve(info, grad, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            raise FitError("singular information matrix in logistic fit") from None
        if not np.all(np.isfinite(step)):
            raise FitError("singular information matrix in logistic fit")
        t = 1.0
        for _ in range(50):
            new = coef + t * step
            new_ll = _loglik(X, r, new)
            if new_ll >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        else:
            raise FitError("IRLS step-halving failed to improve the likelihood")
        improving = new_ll > ll
        coef, ll = new, new_ll
        if np.linalg.norm(coef) > 1e3 and improving:
            raise FitError("coefficients diverging: perfect or quasi-complete separation")
    p = expit(X @ coef)
    gnorm = np.linalg.norm(X.T @ (r - p))
    if gnorm <= tol * max(1.0, np.sqrt(len(r))):
        # float noise floor on large samples
        _check_separation(X, coef)
        return PropensityModel(spec, coef, iterations=max_iter)
    raise FitError(f"IRLS did not converge in {max_iter} iterations (|grad|={gnorm:.3g})")


def _check_separation(X, coef):
    # A perfectly separated fit "converges" once every probability saturates,
    # long before the coefficients pass the divergence bound. Quasi-complete
    # separation (only some rows saturated) is left alone.
    if np.min(np.abs(X @ coef)) > SEPARATION_ETA:
        raise FitError("every fitted probability is numerically 0 or 1: perfect separation")


def _check_rank(X, names):
    _, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > d[0] * max(X.shape) * np.finfo(float).eps)) if d.size else 0
    if rank < X.shape[1]:
        bad = [names[j] for j in piv[rank:]]
        raise FitError(f"rank-deficient design; collinear columns: {', '.join(bad)}")


def _names(spec: ModelSpec, ds: Dataset):
    return ["intercept"] + [ds.columns[c] for c in spec.columns]


def weighted_lstsq(X, y, w=None):
    """Minimise ``sum w_i (y_i - X_i b)^2``."""
    if w is not None:
        sw = np.sqrt(np.asarray(w, dtype=float))
        X = X * sw[:, None]
        y = y * sw
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coef


def fit_outcome(ds: Dataset, idx, spec: ModelSpec) -> OutcomeModel:
    """Gaussian linear model on the complete cases of ``idx``.

    ``sigma`` is the maximum-likelihood estimate ``sqrt(RSS / m)``.
    """
    spec.validate(ds)
    idx = as_index(idx, ds.n)
    cc = idx[ds.r[idx] == 1]
    X = spec.design(ds.x[cc])
    if cc.size < X.shape[1] + 1:
        raise FitError(
            f"{cc.size} complete cases are too few for {X.shape[1]} coefficients plus a variance"
        )
    _check_rank(X, _names(spec, ds))
    y = ds.y[cc]
    coef = weighted_lstsq(X, y)
    resid = y - X @ coef
    sigma = float(np.sqrt(resid @ resid / cc.size))
    return OutcomeModel(spec, coef, sigma)


def draw_imputations(
    model: OutcomeModel, ds: Dataset, target_idx, T: int = 100, seed: int = 0, model_index: int = 0
) -> ImputationDraws:
    """``T`` independent Gaussian draws ``x_i b + sigma z`` for each target row."""
    if T < 1:
        raise ValueError("T must be >= 1")
    target_idx = as_index(target_idx, ds.n)
    mean = model.predict(ds.x[target_idx])
    z = np.random.default_rng(seed).standard_normal((T, target_idx.size))
    values = mean[None, :] + model.sigma * z
    values.setflags(write=False)
    return ImputationDraws(values, target_idx.copy(), model_index, seed)


def per_model_estimate(
    ds: Dataset,
    idx,
    draws: ImputationDraws,
    spec: ModelSpec | None = None,
    loss: str = "least_squares",
) -> PerModelEstimate:
    """Linear fit to observed outcomes plus Monte Carlo imputed ones.

    Minimises ``sum_obs (y - mu)^2 + sum_mis T^-1 sum_t (Y^t - mu)^2``. For
    squared loss the inner average collapses to ``(Ybar - mu)^2`` plus a
    constant, so the stacked problem is one OLS with each missing outcome
    replaced by its draw mean.
    """
    if loss != "least_squares":
        raise ValueError(f"unsupported loss {loss!r}")
    spec = spec or full_spec(ds)
    idx = as_index(idx, ds.n)
    mis = idx[ds.r[idx] == 0]
    yfill = ds.y[idx].copy()
    if mis.size:
        yfill[ds.r[idx] == 0] = draws.for_rows(mis).mean(axis=0)
    X = spec.design(ds.x[idx])
    _check_rank(X, _names(spec, ds))
    return PerModelEstimate(spec, weighted_lstsq(X, yfill))
