"""Multiple-robust conformal prediction intervals for outcomes missing at random."""

from .baselines import IntervalPredictor, impute_sc, split_conformal_cc
from .calibration import (
    CalibrationOptions,
    CalibrationResult,
    ConformityScores,
    PredictionInterval,
    calibrate,
    calibrate_scores,
    conformity_scores,
    predict_interval,
)
from .data import Dataset, ModelSpec, SplitIndices, load_csv, save_csv, split
from .el import ELSolution, solve_el
from .exceptions import (
    CalibrationError,
    ConvergenceError,
    DataError,
    FitError,
    MRConformalError,
    SolverError,
)
from .models import draw_imputations, fit_outcome, fit_propensity, per_model_estimate
from .mr import MRFit, build_train_moments, mr_fit, train

__version__ = "0.1.0"

__all__ = [
    "IntervalPredictor",
    "impute_sc",
    "split_conformal_cc",
    "CalibrationOptions",
    "CalibrationResult",
    "ConformityScores",
    "PredictionInterval",
    "calibrate",
    "calibrate_scores",
    "conformity_scores",
    "predict_interval",
    "Dataset",
    "ModelSpec",
    "SplitIndices",
    "load_csv",
    "save_csv",
    "split",
    "ELSolution",
    "solve_el",
    "CalibrationError",
    "ConvergenceError",
    "DataError",
    "FitError",
    "MRConformalError",
    "SolverError",
    "draw_imputations",
    "fit_outcome",
    "fit_propensity",
    "per_model_estimate",
    "MRFit",
    "build_train_moments",
    "mr_fit",
    "train",
]
