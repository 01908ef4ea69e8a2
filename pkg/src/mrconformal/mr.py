"""Multiple-robust regression: training-stage moments and the EL-weighted fit."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, ModelSpec, as_index
from .el import ELSolution, solve_el
from .exceptions import FitError
from .models import (
    ImputationDraws,
    OutcomeModel,
    PerModelEstimate,
    PropensityModel,
    _check_rank,
    _names,
    draw_imputations,
    fit_outcome,
    fit_propensity,
    full_spec,
    per_model_estimate,
    weighted_lstsq,
)

__all__ = [
    "MomentMatrix",
    "MRFit",
    "WorkingModels",
    "build_train_moments",
    "mr_fit",
    "fit_working_models",
    "train",
    "substream",
]


def substream(seed: int, *labels: int) -> int:
    """Independent child seed for ``(seed, *labels)``."""
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *labels]).generate_state(1)[0])


@dataclass(frozen=True)
class MomentMatrix:
    """Centered moments, one row per complete case in ``rows``."""

    v: np.ndarray
    rows: np.ndarray
    centers: np.ndarray
    labels: tuple[str, ...] = ()


@dataclass(frozen=True)
class MRFit:
    spec: ModelSpec
    beta: np.ndarray
    train_weights: ELSolution | None = None

    def predict(self, x) -> np.ndarray:
        return self.spec.design(x) @ self.beta


@dataclass(frozen=True)
class WorkingModels:
    """Working models fitted on the training rows, with their imputations."""

    propensities: list[PropensityModel]
    outcomes: list[OutcomeModel]
    draws: list[ImputationDraws] = field(default_factory=list)
    estimates: list[PerModelEstimate] = field(default_factory=list)


def build_train_moments(
    ds: Dataset,
    train_idx,
    propensities: Sequence[PropensityModel],
    outcomes: Sequence[tuple[OutcomeModel, ImputationDraws, PerModelEstimate]],
) -> MomentMatrix:
    """Rows ``(pi^j(x_i) - theta^j, g^k(x_i) - eta^k)`` for complete training cases.

    ``g^k(x_i)`` is the draw average of ``Y_i^t - mu_k(x_i)``; with squared
    loss the derivative's factor 2 is dropped. Centers are averages over all
    training rows.
    """
    idx = as_index(train_idx, ds.n)
    x = ds.x[idx]
    cols, labels = [], []
    for j, pm in enumerate(propensities):
        cols.append(pm.predict(x))
        labels.append(f"pi{j + 1}")
    for k, (_, draws, est) in enumerate(outcomes):
        Y = draws.for_rows(idx)
        cols.append(Y.mean(axis=0) - est.predict(x))
        labels.append(f"g{k + 1}")
    if not cols:
        full = np.zeros((idx.size, 0))
    else:
        full = np.column_stack(cols)
    centers = full.mean(axis=0)
    cc = ds.r[idx] == 1
    return MomentMatrix(full[cc] - centers, idx[cc], centers, tuple(labels))


def mr_fit(ds: Dataset, train_idx, el: ELSolution | None, spec: ModelSpec | None = None) -> MRFit:
    """Weighted least squares on the complete training cases.

    ``el=None`` means uniform weights (complete-case OLS).
    """
    spec = spec or full_spec(ds)
    idx = as_index(train_idx, ds.n)
    cc = idx[ds.r[idx] == 1]
    if cc.size == 0:
        raise FitError("no complete training cases")
    X = spec.design(ds.x[cc])
    if el is not None and el.weights.shape != (cc.size,):
        raise ValueError("EL weights are not aligned with the complete training cases")
    _check_rank(X, _names(spec, ds))
    w = None if el is None else el.weights
    return MRFit(spec, weighted_lstsq(X, ds.y[cc], w), el)


def fit_working_models(
    ds: Dataset,
    train_idx,
    propensity_specs: Sequence[ModelSpec],
    outcome_specs: Sequence[ModelSpec],
    T: int = 100,
    seed: int = 0,
    regression_spec: ModelSpec | None = None,
) -> WorkingModels:
    idx = as_index(train_idx, ds.n)
    props = [fit_propensity(ds, idx, s) for s in propensity_specs]
    outs, draws, ests = [], [], []
    for k, s in enumerate(outcome_specs):
        om = fit_outcome(ds, idx, s)
        dr = draw_imputations(om, ds, idx, T, substream(seed, 1, k), model_index=k)
        outs.append(om)
        draws.append(dr)
        ests.append(per_model_estimate(ds, idx, dr, regression_spec))
    return WorkingModels(props, outs, draws, ests)


def train(
    ds: Dataset,
    train_idx,
    propensity_specs: Sequence[ModelSpec],
    outcome_specs: Sequence[ModelSpec],
    T: int = 100,
    seed: int = 0,
    regression_spec: ModelSpec | None = None,
    el_tol: float = 1e-8,
) -> tuple[MRFit, WorkingModels]:
    """Fit working models, solve for EL weights and return the MR fit."""
    wm = fit_working_models(ds, train_idx, propensity_specs, outcome_specs, T, seed, regression_spec)
    mm = build_train_moments(ds, train_idx, wm.propensities, list(zip(wm.outcomes, wm.draws, wm.estimates)))
    el = solve_el(mm.v, tol=el_tol)
    return mr_fit(ds, train_idx, el, regression_spec), wm
