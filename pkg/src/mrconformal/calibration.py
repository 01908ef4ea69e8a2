"""Double calibration of conformity scores and interval construction.

Steps, given an MR fit trained on disjoint rows:

1. absolute-residual scores on complete calibration cases, and imputed scores
   for every calibration row from each outcome model's draws;
2. a model-wise tau-quantile per outcome model over the pooled
   observed/imputed scores, and its centered psi-moment;
3. EL weights on complete calibration cases balancing propensity moments and
   psi-moments;
4. the weighted tau-quantile of the observed scores, which is the interval
   half-width.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, as_index
from .el import ELSolution, solve_el
from .exceptions import CalibrationError
from .models import OutcomeModel, PropensityModel, draw_imputations
from .mr import MomentMatrix, MRFit, substream
from .quantile import conformal_level, psi, weighted_quantile

__all__ = [
    "ConformityScores",
    "CalibrationResult",
    "PredictionInterval",
    "CalibrationOptions",
    "conformity_scores",
    "model_wise_quantile",
    "psi_moment",
    "calib_moments",
    "solve_q_mr",
    "calibrate",
    "calibrate_scores",
    "predict_interval",
]

POOLS = ("draws", "mean")
PSI_VARIANTS = ("imputed", "observed")
PSI_CENTERS = ("full", "mixed")


@dataclass(frozen=True)
class CalibrationOptions:
    """Switches for the ambiguous parts of the calibration stage.

    pool
        ``"draws"``: every imputation draw enters the pooled check-loss and
        psi averages with weight ``1/T`` (the Monte Carlo average is taken of
        the loss). ``"mean"``: each missing row contributes its draw-averaged
        absolute residual as a single score.
    psi_variant
        Source of the complete-case psi entries in the EL moment rows:
        ``"imputed"`` uses the outcome model's draws at ``x_i``,
        ``"observed"`` uses the observed score.
    psi_center
        Centering constant of the psi columns. ``"full"`` centers the
        complete-case psi function at its average over all calibration rows,
        exactly as the propensity columns are centered; this is a valid
        balancing moment whichever models are misspecified, and requires
        ``psi_variant="imputed"``. ``"mixed"`` centers at ``xi_k`` (observed psi
        on complete cases, imputed psi elsewhere).
    finite_sample
        Replace ``tau`` by ``ceil((m_eff + 1) tau) / m_eff`` in the final
        weighted quantile, with Kish effective size ``m_eff``.
    """

    pool: str = "draws"
    psi_variant: str = "imputed"
    psi_center: str = "full"
    finite_sample: bool = False
    el_tol: float = 1e-8
    el_max_iter: int = 200

    def __post_init__(self):
        if self.pool not in POOLS:
            raise ValueError(f"pool must be one of {POOLS}")
        if self.psi_variant not in PSI_VARIANTS:
            raise ValueError(f"psi_variant must be one of {PSI_VARIANTS}")
        if self.psi_center not in PSI_CENTERS:
            raise ValueError(f"psi_center must be one of {PSI_CENTERS}")
        if self.psi_center == "full" and self.psi_variant == "observed":
            raise ValueError("psi_center='full' needs psi_variant='imputed'; observed scores "
                             "are unavailable on incomplete rows")


@dataclass(frozen=True)
class ConformityScores:
    """Scores over the calibration rows ``calib_idx``.

    ``observed`` holds ``|y_i - mu(x_i)|`` for the complete cases (in
    ``calib_idx`` order). ``imputed[k, i]`` is the draw average of
    ``|Y_i^(t,k) - mu(x_i)|`` and ``draws[k, t, i]`` the individual absolute
    residuals; both cover every calibration row.
    """

    calib_idx: np.ndarray
    r: np.ndarray
    observed: np.ndarray
    imputed: np.ndarray
    draws: np.ndarray | None = field(default=None, repr=False)

    @property
    def K(self) -> int:
        return self.imputed.shape[0]

    @property
    def observed_full(self) -> np.ndarray:
        """Observed scores scattered to length ``n_cal`` (nan where missing)."""
        out = np.full(self.r.size, np.nan)
        out[self.r == 1] = self.observed
        return out

    def select(self, models: Sequence[int]) -> "ConformityScores":
        models = list(models)
        draws = None if self.draws is None else self.draws[models]
        return ConformityScores(self.calib_idx, self.r, self.observed, self.imputed[models], draws)

    def pool(self, k: int, mode: str = "draws") -> tuple[np.ndarray, np.ndarray]:
        """Pooled ``(values, weights)`` for outcome model ``k``; weights sum to ``n_cal``."""
        obs = self.r == 1
        if mode == "mean" or self.draws is None:
            vals = np.where(obs, self.observed_full, self.imputed[k])
            return vals, np.ones(vals.size)
        miss = ~obs
        D = self.draws[k][:, miss]
        T = D.shape[0]
        vals = np.concatenate([self.observed, D.ravel()])
        wts = np.concatenate([np.ones(self.observed.size), np.full(D.size, 1.0 / T)])
        return vals, wts


@dataclass(frozen=True)
class CalibrationResult:
    q_k: np.ndarray
    xi_k: np.ndarray
    theta_j: np.ndarray
    d: np.ndarray
    lam: np.ndarray
    q_mr: float
    tau: float
    el: ELSolution | None = None
    moments: MomentMatrix | None = None
    scores: ConformityScores | None = field(default=None, repr=False)


@dataclass(frozen=True)
class PredictionInterval:
    center: np.ndarray
    half_width: float

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.half_width

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.half_width

    @property
    def length(self) -> float:
        return 2.0 * self.half_width

    def covers(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return (self.lower <= y) & (y <= self.upper)


def conformity_scores(
    fit: MRFit,
    ds: Dataset,
    calib_idx,
    outcome_models: Sequence[OutcomeModel],
    T: int = 100,
    seed: int = 0,
) -> ConformityScores:
    """Observed and imputed absolute-residual scores on the calibration rows.

    Draws come from the training-fitted outcome models; nothing is refitted.
    """
    idx = as_index(calib_idx, ds.n)
    x = ds.x[idx]
    r = ds.r[idx].copy()
    center = fit.predict(x)
    obs = r == 1
    observed = np.abs(ds.y[idx][obs] - center[obs])
    K = len(outcome_models)
    draws = np.empty((K, T, idx.size))
    for k, om in enumerate(outcome_models):
        dr = draw_imputations(om, ds, idx, T, substream(seed, 2, k), model_index=k)
        draws[k] = np.abs(dr.values - center[None, :])
    imputed = draws.mean(axis=1) if K else np.zeros((0, idx.size))
    return ConformityScores(idx, r, observed, imputed, draws)


def model_wise_quantile(scores: ConformityScores, k: int, tau: float, pool: str = "draws") -> float:
    """Generalized-inverse tau-quantile of outcome model ``k``'s pooled scores.

    This point minimises the pooled check-loss risk.
    """
    vals, wts = scores.pool(k, pool)
    if vals.size == 0:
        raise ValueError("empty score pool")
    return weighted_quantile(vals, wts, tau)


def psi_moment(scores: ConformityScores, k: int, q_k: float, tau: float, pool: str = "draws") -> float:
    """Mean over calibration rows of psi at the observed (r=1) or imputed (r=0) score."""
    vals, wts = scores.pool(k, pool)
    return float(np.sum(wts * psi(vals - q_k, tau)) / scores.r.size)


def imputed_psi(scores: ConformityScores, k: int, q_k: float, tau: float, pool: str = "draws"):
    """Model ``k``'s psi at ``q_k`` for every calibration row, from imputations only.

    With ``pool="draws"`` this is the draw average of ``psi(|Y^t - mu| - q_k)``,
    an estimate of ``E_k[psi | x_i]``.
    """
    if pool == "mean" or scores.draws is None:
        return psi(scores.imputed[k] - q_k, tau)
    return psi(scores.draws[k] - q_k, tau).mean(axis=0)


def _cc_psi_entries(scores: ConformityScores, k, q_k, tau, variant, pool):
    obs = scores.r == 1
    if variant == "observed":
        return psi(scores.observed - q_k, tau)
    return imputed_psi(scores, k, q_k, tau, pool)[obs]


def calib_moments(
    ds: Dataset,
    calib_idx,
    propensities: Sequence[PropensityModel],
    scores: ConformityScores,
    q_k,
    xi_k,
    tau: float,
    psi_variant: str = "imputed",
    pool: str = "draws",
    psi_center: str = "mixed",
) -> MomentMatrix:
    """Centered calibration moment rows for the complete calibration cases.

    Propensity columns are centered at their calibration-set means. Psi
    columns are centered at ``xi_k`` (``psi_center="mixed"``) or at the
    calibration-set mean of the imputed psi (``"full"``).
    """
    idx = as_index(calib_idx, ds.n)
    obs = scores.r == 1
    x = ds.x[idx]
    cols, centers, labels = [], [], []
    for j, pm in enumerate(propensities):
        p = pm.predict(x)
        theta = p.mean()
        cols.append(p[obs] - theta)
        centers.append(theta)
        labels.append(f"pi{j + 1}")
    for k in range(len(q_k)):
        if psi_center == "full":
            if psi_variant != "imputed":
                raise ValueError("psi_center='full' needs psi_variant='imputed'")
            u = imputed_psi(scores, k, q_k[k], tau, pool)
            c = float(u.mean())
            cols.append(u[obs] - c)
        else:
            c = float(xi_k[k])
            cols.append(_cc_psi_entries(scores, k, q_k[k], tau, psi_variant, pool) - c)
        centers.append(c)
        labels.append(f"psi{k + 1}")
    v = np.column_stack(cols) if cols else np.zeros((int(obs.sum()), 0))
    return MomentMatrix(v, idx[obs], np.asarray(centers, dtype=float), tuple(labels))


def solve_q_mr(observed, d, tau: float) -> float:
    """Smallest root of ``sum_i d_i psi_tau(eps_i - q) = 0``: the weighted tau-quantile."""
    observed = np.asarray(observed, dtype=float)
    if observed.size == 0:
        raise ValueError("no observed scores")
    return weighted_quantile(observed, d, tau)


def calibrate(
    fit: MRFit,
    ds: Dataset,
    calib_idx,
    propensities: Sequence[PropensityModel],
    outcome_models: Sequence[OutcomeModel],
    tau: float = 0.9,
    T: int = 100,
    seed: int = 0,
    options: CalibrationOptions | None = None,
) -> CalibrationResult:
    """Run the calibration stage and return the double-calibrated quantile."""
    idx = as_index(calib_idx, ds.n)
    if int(ds.r[idx].sum()) == 0:
        raise CalibrationError("no complete cases in the calibration set")
    scores = conformity_scores(fit, ds, idx, outcome_models, T, seed)
    return calibrate_scores(scores, ds, propensities, tau, options)


def calibrate_scores(
    scores: ConformityScores,
    ds: Dataset,
    propensities: Sequence[PropensityModel],
    tau: float = 0.9,
    options: CalibrationOptions | None = None,
    models: Sequence[int] | None = None,
) -> CalibrationResult:
    """Calibration from precomputed scores.

    ``models`` restricts the psi-moments to a subset of the outcome models
    whose imputations ``scores`` holds (all by default).
    """
    opt = options or CalibrationOptions()
    idx = scores.calib_idx
    if scores.observed.size == 0:
        raise CalibrationError("no complete cases in the calibration set")
    if models is not None:
        scores = scores.select(models)
    K = scores.K
    q_k = np.array([model_wise_quantile(scores, k, tau, opt.pool) for k in range(K)])
    xi_k = np.array([psi_moment(scores, k, q_k[k], tau, opt.pool) for k in range(K)])
    mm = calib_moments(ds, idx, propensities, scores, q_k, xi_k, tau, opt.psi_variant, opt.pool, opt.psi_center)
    el = solve_el(mm.v, tol=opt.el_tol, max_iter=opt.el_max_iter)
    level = tau
    if opt.finite_sample:
        level = conformal_level(tau, 1.0 / np.sum(el.weights**2))
    q_mr = solve_q_mr(scores.observed, el.weights, level)
    theta = mm.centers[: len(propensities)]
    return CalibrationResult(q_k, xi_k, theta, el.weights, el.rho, q_mr, tau, el, mm, scores)


def predict_interval(fit: MRFit, x, result: CalibrationResult | float) -> PredictionInterval:
    """``[mu(x) - q, mu(x) + q]`` with ``q`` the calibrated half-width."""
    q = result.q_mr if isinstance(result, CalibrationResult) else float(result)
    return PredictionInterval(fit.predict(x), q)
