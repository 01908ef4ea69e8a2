"""Monte Carlo harness for the linear MAR simulation design.

Covariates ``X1 ~ N(5, 1)``, ``X2 ~ Bernoulli(0.5)``, ``X3, X4 ~ N(0, 1)``;
outcome ``Y = 3.5 + 0.5 X1 + 2 X2 + X3 + X4 + sigma * eps``; observation
indicator ``R ~ Bernoulli(expit(3.5 - 5 X2))``.

Replicates are independent tasks keyed by ``(setting, scenario, replicate)``
and seeded from a stable hash of those labels, so results do not depend on
execution order or worker count.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from .baselines import impute_sc_quantile, split_conformal_quantile
from .calibration import CalibrationOptions, calibrate_scores, conformity_scores
from .data import Dataset, ModelSpec, split
from .exceptions import MRConformalError
from .mr import substream, train

__all__ = [
    "BETA0",
    "ScenarioSpec",
    "SettingSpec",
    "SCENARIOS",
    "SETTINGS",
    "METHODS",
    "ExperimentConfig",
    "ExperimentSummary",
    "ReplicateResult",
    "generate_data",
    "generate_arrays",
    "candidate_models",
    "replicate_seed",
    "run_replicate",
    "run_experiment",
    "summarize",
]

log = logging.getLogger(__name__)

BETA0 = np.array([3.5, 0.5, 2.0, 1.0, 1.0])
PROPENSITY_COEF = (3.5, -5.0)

X1, X2, X3, X4 = 0, 1, 2, 3


@dataclass(frozen=True)
class ScenarioSpec:
    """Error law. ``C`` uses ``sigma * N(0, (0.6 + 0.2|X1|)^2)``."""

    id: str
    sigma: float
    noise: str

    def draw_noise(self, rng: np.random.Generator, x1: np.ndarray) -> np.ndarray:
        n = x1.size
        if self.noise == "gaussian_unit":
            e = rng.standard_normal(n)
        elif self.noise == "student_t3_unit_variance":
            e = rng.standard_t(3, n) * np.sqrt(1.0 / 3.0)
        elif self.noise == "hetero_gaussian":
            e = rng.standard_normal(n) * (0.6 + 0.2 * np.abs(x1))
        else:
            raise ValueError(f"unknown noise law {self.noise!r}")
        return self.sigma * e


SCENARIOS = {
    "A": ScenarioSpec("A", 1.0, "gaussian_unit"),
    "B": ScenarioSpec("B", 1.0, "student_t3_unit_variance"),
    "C": ScenarioSpec("C", 0.6, "hetero_gaussian"),
}


@dataclass(frozen=True)
class SettingSpec:
    id: str
    use_pi1: bool
    use_pi2: bool
    use_a1: bool
    use_a2: bool


SETTINGS = {
    "S1": SettingSpec("S1", True, True, True, True),
    "S2": SettingSpec("S2", True, False, True, True),
    "S3": SettingSpec("S3", True, True, False, True),
    "S4": SettingSpec("S4", True, True, True, False),
}

PI1 = ModelSpec("propensity", (X2,), "pi1")
PI2 = ModelSpec("propensity", (X1, X2, X3, X4), "pi2")
A1 = ModelSpec("outcome", (X1, X2, X3, X4), "a1")
A2 = ModelSpec("outcome", (X1, X2, X3), "a2")

# Single-model comparison: EL calibration on the first propensity moment only.
METHODS = ("cm_mrl", "impute_sc", "sc_cc", "single_pi")


def scenario(s: str | ScenarioSpec) -> ScenarioSpec:
    return s if isinstance(s, ScenarioSpec) else SCENARIOS[s]


def setting(s: str | SettingSpec) -> SettingSpec:
    return s if isinstance(s, SettingSpec) else SETTINGS[s]


def generate_arrays(n: int, scen, seed: int):
    """Covariates, the full outcome vector and the observation indicator."""
    if n < 1:
        raise ValueError("n must be >= 1")
    scen = scenario(scen)
    rng = np.random.default_rng(seed)
    x = np.column_stack(
        [
            rng.normal(5.0, 1.0, n),
            rng.binomial(1, 0.5, n).astype(float),
            rng.standard_normal(n),
            rng.standard_normal(n),
        ]
    )
    y = BETA0[0] + x @ BETA0[1:] + scen.draw_noise(rng, x[:, X1])
    r = rng.binomial(1, expit(PROPENSITY_COEF[0] + PROPENSITY_COEF[1] * x[:, X2]))
    return x, y, r


def generate_data(n: int, scen, seed: int) -> Dataset:
    x, y, r = generate_arrays(n, scen, seed)
    return Dataset(x, y, r, ("X1", "X2", "X3", "X4"))


def candidate_models(sett) -> tuple[list[ModelSpec], list[ModelSpec]]:
    s = setting(sett)
    props = [m for m, on in ((PI1, s.use_pi1), (PI2, s.use_pi2)) if on]
    outs = [m for m, on in ((A1, s.use_a1), (A2, s.use_a2)) if on]
    return props, outs


def replicate_seed(master_seed: int, *labels) -> int:
    """Stable 64-bit seed from the master seed and string/int labels."""
    key = "|".join([str(int(master_seed))] + [str(lab) for lab in labels])
    return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "little")


@dataclass(frozen=True)
class ExperimentConfig:
    settings: tuple[str, ...] = tuple(SETTINGS)
    scenarios: tuple[str, ...] = tuple(SCENARIOS)
    methods: tuple[str, ...] = METHODS
    n: int = 1600
    n_eval: int = 2000
    replicates: int = 50
    tau: float = 0.9
    T: int = 100
    master_seed: int = 20240101
    train_fraction: float = 0.5
    impute_model: int = 0
    options: CalibrationOptions = field(default_factory=CalibrationOptions)
    scenario_c_sigma: float = 0.6
    workers: int = 1

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.n < 4:
            raise ValueError("n must be >= 4")
        if self.n_eval < 1:
            raise ValueError("n_eval must be >= 1")
        for s in self.settings:
            if s not in SETTINGS:
                raise ValueError(f"unknown setting {s!r}")
        for s in self.scenarios:
            if s not in SCENARIOS:
                raise ValueError(f"unknown scenario {s!r}")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")

    def scenario_spec(self, sid: str) -> ScenarioSpec:
        spec = SCENARIOS[sid]
        if sid == "C":
            spec = replace(spec, sigma=self.scenario_c_sigma)
        return spec


@dataclass(frozen=True)
class ReplicateResult:
    setting: str
    scenario: str
    replicate: int
    method: str
    coverage: float
    length: float
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass(frozen=True)
class ExperimentSummary:
    method: str
    setting: str
    scenario: str
    coverage_mean: float
    coverage_sd: float
    length_mean: float
    length_sd: float
    replicates: int
    failed: int = 0


def _method_half_width(method, scores, ds, props, cfg):
    if method == "cm_mrl":
        return calibrate_scores(scores, ds, props, cfg.tau, cfg.options).q_mr
    if method == "sc_cc":
        return split_conformal_quantile(scores, cfg.tau, cfg.options.finite_sample)
    if method == "impute_sc":
        k = min(cfg.impute_model, scores.K - 1)
        return impute_sc_quantile(scores, k, cfg.tau, cfg.options.pool)
    if method == "single_pi":
        return calibrate_scores(scores, ds, props[:1], cfg.tau, cfg.options, models=[]).q_mr
    raise ValueError(f"unknown method {method!r}")


def run_replicate(
    n: int,
    scen,
    sett,
    tau: float = 0.9,
    T: int = 100,
    seed: int = 0,
    n_eval: int = 2000,
    methods: Sequence[str] = METHODS,
    options: CalibrationOptions | None = None,
    train_fraction: float = 0.5,
    impute_model: int = 0,
) -> dict[str, tuple[float, float]]:
    """One replicate: returns ``{method: (coverage, length)}``.

    Coverage is measured on a fresh, fully observed evaluation sample.
    """
    cfg = ExperimentConfig(
        n=max(n, 4), n_eval=n_eval, tau=tau, T=T, methods=tuple(methods),
        options=options or CalibrationOptions(), train_fraction=train_fraction,
        impute_model=impute_model,
    )
    out = {}
    for res in _replicate(scenario(scen), setting(sett), seed, cfg):
        if res.error:
            raise MRConformalError(f"{res.method}: {res.error}")
        out[res.method] = (res.coverage, res.length)
    return out


def _replicate(scen: ScenarioSpec, sett: SettingSpec, seed: int, cfg: ExperimentConfig, rep: int = 0):
    ds = generate_data(cfg.n, scen, substream(seed, 10))
    sp = split(ds, cfg.train_fraction, substream(seed, 11))
    prop_specs, out_specs = candidate_models(sett)
    try:
        fit, wm = train(ds, sp.train, prop_specs, out_specs, cfg.T, substream(seed, 12))
        scores = conformity_scores(fit, ds, sp.calib, wm.outcomes, cfg.T, substream(seed, 13))
    except MRConformalError as e:
        return [
            ReplicateResult(sett.id, scen.id, rep, m, np.nan, np.nan, f"{type(e).__name__}: {e}")
            for m in cfg.methods
        ]
    x_eval, y_eval, _ = generate_arrays(cfg.n_eval, scen, substream(seed, 14))
    center = fit.predict(x_eval)
    results = []
    for m in cfg.methods:
        try:
            q = _method_half_width(m, scores, ds, wm.propensities, cfg)
        except MRConformalError as e:
            results.append(
                ReplicateResult(sett.id, scen.id, rep, m, np.nan, np.nan, f"{type(e).__name__}: {e}")
            )
            continue
        cov = float(np.mean(np.abs(y_eval - center) <= q))
        results.append(ReplicateResult(sett.id, scen.id, rep, m, cov, 2.0 * q))
    return results


def _task(args):
    sett_id, scen_id, rep, cfg = args
    seed = replicate_seed(cfg.master_seed, sett_id, scen_id, rep)
    return _replicate(cfg.scenario_spec(scen_id), SETTINGS[sett_id], seed, cfg, rep)


def run_experiment(cfg: ExperimentConfig, progress=None) -> list[ReplicateResult]:
    """All replicate results for the configured grid, sorted by key."""
    tasks = [
        (st, sc, rep, cfg)
        for st in cfg.settings
        for sc in cfg.scenarios
        for rep in range(cfg.replicates)
    ]
    results: list[ReplicateResult] = []
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            for chunk in ex.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * cfg.workers))):
                results.extend(chunk)
                if progress:
                    progress()
    else:
        for t in tasks:
            results.extend(_task(t))
            if progress:
                progress()
    order = {m: i for i, m in enumerate(cfg.methods)}
    results.sort(key=lambda r: (r.setting, r.scenario, order[r.method], r.replicate))
    for r in results:
        if r.error:
            log.warning("%s/%s rep %d %s failed: %s", r.setting, r.scenario, r.replicate, r.method, r.error)
    return results


def summarize(results: Iterable[ReplicateResult]) -> list[ExperimentSummary]:
    """Mean and sample sd (ddof=1) of coverage and length per cell and method."""
    cells: dict[tuple[str, str, str], list[ReplicateResult]] = {}
    for r in results:
        cells.setdefault((r.method, r.setting, r.scenario), []).append(r)
    out = []
    for (method, st, sc), rs in cells.items():
        ok = [r for r in rs if r.ok]
        cov = np.array([r.coverage for r in ok])
        ln = np.array([r.length for r in ok])
        sd = (lambda a: float(np.std(a, ddof=1)) if a.size > 1 else 0.0)
        out.append(
            ExperimentSummary(
                method, st, sc,
                float(cov.mean()) if cov.size else float("nan"), sd(cov),
                float(ln.mean()) if ln.size else float("nan"), sd(ln),
                len(ok), len(rs) - len(ok),
            )
        )
    return out
