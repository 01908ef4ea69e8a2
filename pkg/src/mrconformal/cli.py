"""Command-line interface.

``simulate`` runs the Monte Carlo grid and writes ``summary.csv`` and
``lengths.csv``. ``predict`` fits on a user CSV and writes intervals for new
rows. Diagnostics go to stderr as ``key=value`` lines; exit codes are 0 on
success, 1 on a numerical failure and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .calibration import POOLS, PSI_CENTERS, PSI_VARIANTS, CalibrationOptions, calibrate
from .data import ModelSpec, load_csv, split
from .exceptions import DataError, MRConformalError
from .mr import substream, train
from .simulation import METHODS, SCENARIOS, SETTINGS, ExperimentConfig, run_experiment, summarize

log = logging.getLogger("mrconformal")

SUMMARY_COLUMNS = (
    "method", "setting", "scenario", "coverage_mean", "coverage_sd",
    "length_mean", "length_sd", "replicates", "failed",
)
LENGTH_COLUMNS = ("method", "setting", "scenario", "replicate", "coverage", "length", "status")


class UsageError(Exception):
    pass


def _diag(**kv):
    for k, v in kv.items():
        if isinstance(v, (list, tuple, np.ndarray)):
            v = ";".join(repr(float(a)) if isinstance(a, (float, np.floating)) else str(a) for a in v)
        elif isinstance(v, (float, np.floating)):
            v = repr(float(v))
        print(f"{k}={v}", file=sys.stderr)


def _num(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _csv_list(text):
    if isinstance(text, (list, tuple)):
        return [str(t) for t in text]
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _shared(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file whose keys mirror the long flag names")
    p.add_argument("--tau", type=float, default=0.9, help="target coverage (default 0.9)")
    p.add_argument("--T", type=int, default=100, help="imputation draws per row (default 100)")
    p.add_argument("--seed", type=int, default=20240101, help="master seed")
    p.add_argument("--out-dir", default=".", help="output directory")
    p.add_argument("--psi-variant", choices=PSI_VARIANTS, default="imputed")
    p.add_argument("--psi-center", choices=PSI_CENTERS, default=None,
                   help="centering of the psi moments (default: full, or mixed with --psi-variant observed)")
    p.add_argument("--pool", choices=POOLS, default="draws")
    p.add_argument("--finite-sample-correction", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mrconformal",
        description="Multiple-robust conformal prediction intervals with outcomes missing at random.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the Monte Carlo simulation grid")
    _shared(sim)
    sim.add_argument("--settings", default=",".join(SETTINGS))
    sim.add_argument("--scenarios", default=",".join(SCENARIOS))
    sim.add_argument("--methods", default=",".join(METHODS))
    sim.add_argument("--replicates", type=int, default=50)
    sim.add_argument("--n", type=int, default=1600, help="sample size per replicate")
    sim.add_argument("--n-eval", type=int, default=2000, help="fresh points for coverage")
    sim.add_argument("--scenario-c-sigma", type=float, default=0.6)
    sim.add_argument("--impute-model", type=int, default=0, help="outcome model index for impute_sc")
    sim.add_argument("--workers", type=int, default=1)

    pr = sub.add_parser("predict", help="fit, calibrate and predict intervals for new rows")
    _shared(pr)
    pr.add_argument("--train", required=True, dest="train_csv", help="training CSV (y may be missing)")
    pr.add_argument("--new", required=True, dest="new_csv", help="CSV of covariates to predict")
    pr.add_argument("--y-column", default="y")
    pr.add_argument("--r-column", default=None)
    pr.add_argument("--propensity", action="append", default=None,
                    help="comma-separated covariates of one propensity model (repeatable; default all)")
    pr.add_argument("--outcome", action="append", default=None,
                    help="comma-separated covariates of one outcome model (repeatable; default all)")
    pr.add_argument("--train-fraction", type=float, default=0.5)
    pr.add_argument("--output", default=None, help="intervals CSV (default: stdout)")
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            conf = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as e:
            parser.error(f"cannot read config {args.config}: {e}")
        if not isinstance(conf, dict):
            parser.error("config file must hold a JSON object")
        # config supplies defaults; explicit flags still win on the re-parse
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in subparser._actions}
        conf = {k.replace("-", "_"): v for k, v in conf.items()}
        conf = {"train_csv" if k == "train" else "new_csv" if k == "new" else k: v for k, v in conf.items()}
        unknown = sorted(set(conf) - known)
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        subparser.set_defaults(**conf)
        for a in subparser._actions:
            if a.dest in conf:
                a.required = False
        args = parser.parse_args(argv)
    return args


def _options(args) -> CalibrationOptions:
    return CalibrationOptions(
        pool=args.pool,
        psi_variant=args.psi_variant,
        psi_center=args.psi_center or ("mixed" if args.psi_variant == "observed" else "full"),
        finite_sample=bool(args.finite_sample_correction),
    )


def cmd_simulate(args) -> int:
    try:
        cfg = ExperimentConfig(
            settings=tuple(_csv_list(args.settings)),
            scenarios=tuple(_csv_list(args.scenarios)),
            methods=tuple(_csv_list(args.methods)),
            n=args.n,
            n_eval=args.n_eval,
            replicates=args.replicates,
            tau=args.tau,
            T=args.T,
            master_seed=args.seed,
            impute_model=args.impute_model,
            options=_options(args),
            scenario_c_sigma=args.scenario_c_sigma,
            workers=args.workers,
        )
    except ValueError as e:
        raise UsageError(str(e)) from None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = run_experiment(cfg)
    summaries = summarize(results)
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            d = asdict(s)
            w.writerow([_num(d[c]) for c in SUMMARY_COLUMNS])
    with (out / "lengths.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LENGTH_COLUMNS)
        for r in results:
            status = "ok" if r.ok else "failed"
            w.writerow([r.method, r.setting, r.scenario, r.replicate, _num(r.coverage), _num(r.length), status])
    n_failed = sum(not r.ok for r in results)
    _diag(replicates=len(results), failed=n_failed, out_dir=str(out))
    for s in summaries:
        if s.failed:
            _diag(failed_cell=f"{s.method}/{s.setting}/{s.scenario}", failures=s.failed)
    return 1 if n_failed else 0


def _model_specs(groups, ds, kind):
    if not groups:
        return [ModelSpec(kind, tuple(range(ds.p)), "all")]
    specs = []
    for g in groups:
        names = _csv_list(g)
        missing = [c for c in names if c not in ds.columns]
        if missing:
            raise UsageError(f"unknown covariates in --{kind}: {', '.join(missing)}")
        specs.append(ModelSpec(kind, tuple(ds.columns.index(c) for c in names), g))
    return specs


def _read_new(path, columns):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise UsageError(f"{path}: empty file") from None
        missing = [c for c in columns if c not in header]
        if missing:
            raise UsageError(f"{path}: schema mismatch, missing covariates {', '.join(missing)}")
        pos = [header.index(c) for c in columns]
        rows = []
        for lineno, row in enumerate(reader, start=1):
            if not row:
                continue
            try:
                rows.append([float(row[j]) for j in pos])
            except (ValueError, IndexError):
                raise UsageError(f"{path}: row {lineno} is malformed") from None
    return np.array(rows, dtype=float).reshape(-1, len(columns))


def interval_rows(center, q) -> list[tuple[str, str, str]]:
    """``(prediction, lower, upper)`` strings for each center."""
    return [(_num(float(c)), _num(float(c) - q), _num(float(c) + q)) for c in center]


def cmd_predict(args) -> int:
    try:
        ds = load_csv(args.train_csv, args.y_column, args.r_column)
    except (DataError, OSError) as e:
        raise UsageError(str(e)) from None
    props = _model_specs(args.propensity, ds, "propensity")
    outs = _model_specs(args.outcome, ds, "outcome")
    x_new = _read_new(args.new_csv, ds.columns)
    try:
        sp = split(ds, args.train_fraction, substream(args.seed, 0))
        opt = _options(args)
    except ValueError as e:
        raise UsageError(str(e)) from None
    fit, wm = train(ds, sp.train, props, outs, args.T, substream(args.seed, 1))
    res = calibrate(fit, ds, sp.calib, wm.propensities, wm.outcomes, args.tau, args.T,
                    substream(args.seed, 2), opt)
    _diag(
        q_mr=res.q_mr,
        q_k=res.q_k,
        lambda_norm=float(np.linalg.norm(res.lam)),
        el_iterations_train=fit.train_weights.iterations,
        el_iterations_calib=res.el.iterations,
        dropped_train=list(fit.train_weights.dropped),
        dropped_calib=list(res.el.dropped),
        n_train=sp.train.size,
        n_calib=sp.calib.size,
    )
    rows = interval_rows(fit.predict(x_new), res.q_mr)
    fh = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("prediction", "lower", "upper"))
        w.writerows(rows)
    finally:
        if args.output:
            fh.close()
    return 0


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        return cmd_predict(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except MRConformalError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
