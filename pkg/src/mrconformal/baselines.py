"""Reference interval constructors sharing the CM-MRL center.

``split_conformal_cc`` takes the plain tau-quantile of the observed
calibration scores. ``impute_sc`` fills in missing scores from one outcome
model's imputations and takes the quantile of the pooled vector.
"""

from __future__ import annotations

from dataclasses import dataclass

from .calibration import ConformityScores, PredictionInterval, conformity_scores
from .data import Dataset, as_index
from .exceptions import CalibrationError
from .models import OutcomeModel
from .mr import MRFit
from .quantile import conformal_level, empirical_quantile, weighted_quantile

__all__ = [
    "BASELINES",
    "IntervalPredictor",
    "split_conformal_cc",
    "impute_sc",
    "split_conformal_quantile",
    "impute_sc_quantile",
]

BASELINES = ("split_conformal_cc", "impute_sc")


@dataclass(frozen=True)
class IntervalPredictor:
    """Symmetric interval of fixed half-width around a fitted center."""

    fit: MRFit
    half_width: float

    def __call__(self, x) -> PredictionInterval:
        return PredictionInterval(self.fit.predict(x), self.half_width)


def split_conformal_quantile(scores: ConformityScores, tau: float, finite_sample: bool = False) -> float:
    if scores.observed.size == 0:
        raise CalibrationError("no complete cases in the calibration set")
    level = conformal_level(tau, scores.observed.size) if finite_sample else tau
    return empirical_quantile(scores.observed, level)


def impute_sc_quantile(scores: ConformityScores, k: int, tau: float, pool: str = "draws") -> float:
    vals, wts = scores.pool(k, pool)
    return weighted_quantile(vals, wts, tau)


def split_conformal_cc(fit: MRFit, ds: Dataset, calib_idx, tau: float = 0.9, finite_sample: bool = False):
    """Complete-case split conformal with uniform weights."""
    idx = as_index(calib_idx, ds.n)
    scores = conformity_scores(fit, ds, idx, [], T=1)
    return IntervalPredictor(fit, split_conformal_quantile(scores, tau, finite_sample))


def impute_sc(
    ds: Dataset,
    calib_idx,
    outcome_model: OutcomeModel,
    fit: MRFit,
    tau: float = 0.9,
    T: int = 100,
    seed: int = 0,
    pool: str = "draws",
):
    """Impute missing calibration scores from ``outcome_model``, then split conformal."""
    idx = as_index(calib_idx, ds.n)
    scores = conformity_scores(fit, ds, idx, [outcome_model], T, seed)
    return IntervalPredictor(fit, impute_sc_quantile(scores, 0, tau, pool))
