"""Dataset container, train/calibration splitting and CSV round-tripping.

Outcomes missing at random are stored as ``nan`` in ``y`` together with a 0/1
observation indicator ``r``. Covariates are always fully observed. The
intercept column is never stored; :class:`ModelSpec` prepends it when a design
matrix is built.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import DataError

__all__ = [
    "Dataset",
    "SplitIndices",
    "ModelSpec",
    "load_csv",
    "save_csv",
    "split",
]


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates ``x`` (n, p), outcomes ``y`` (nan where missing), indicator ``r``."""

    x: np.ndarray
    y: np.ndarray
    r: np.ndarray
    columns: tuple[str, ...] = ()

    def __post_init__(self):
        x = _frozen(self.x, float)
        if x.ndim == 1:
            x = _frozen(x.reshape(-1, 1), float)
        y = _frozen(self.y, float)
        r = _frozen(self.r, np.int8)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise DataError(f"x must be a non-empty (n, p) matrix, got shape {x.shape}")
        n = x.shape[0]
        if y.shape != (n,) or r.shape != (n,):
            raise DataError("x, y and r must have the same number of rows")
        if not np.all(np.isfinite(x)):
            raise DataError("covariates must be fully observed and finite")
        if not np.all((r == 0) | (r == 1)):
            raise DataError("r must be binary")
        obs = r == 1
        if not np.all(np.isfinite(y[obs])):
            bad = int(np.flatnonzero(obs & ~np.isfinite(y))[0])
            raise DataError(f"row {bad}: r=1 but y is missing")
        # y is undefined wherever r == 0
        y = y.copy()
        y[~obs] = np.nan
        y.setflags(write=False)
        columns = tuple(self.columns) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(columns) != x.shape[1]:
            raise DataError("number of column names does not match x")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "columns", columns)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        """Number of complete cases."""
        return int(self.r.sum())

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.x[idx], self.y[idx], self.r[idx], self.columns)

    def equals(self, other: "Dataset") -> bool:
        return (
            self.columns == other.columns
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y, equal_nan=True)
            and np.array_equal(self.r, other.r)
        )


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    calib: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "train", _frozen(self.train, int))
        object.__setattr__(self, "calib", _frozen(self.calib, int))


@dataclass(frozen=True)
class ModelSpec:
    """A working model's covariate selection; the intercept is always included.

    ``columns`` are 0-based indices into ``Dataset.x``.
    """

    kind: str
    columns: tuple[int, ...] = field(default_factory=tuple)
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("propensity", "outcome"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        cols = tuple(int(c) for c in self.columns)
        if len(set(cols)) != len(cols):
            raise ValueError(f"duplicate columns in model spec: {cols}")
        object.__setattr__(self, "columns", cols)

    def validate(self, ds: Dataset) -> None:
        bad = [c for c in self.columns if not 0 <= c < ds.p]
        if bad:
            raise DataError(f"column indices {bad} out of range for p={ds.p}")

    def design(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.column_stack([np.ones(x.shape[0]), x[:, list(self.columns)]])


def _parse_float(text, lineno, name):
    try:
        return float(text)
    except ValueError:
        raise DataError(f"row {lineno}: column {name!r} is not numeric: {text!r}") from None


def load_csv(path, y_column: str, r_column: str | None = None) -> Dataset:
    """Read a dataset from CSV.

    Every column other than ``y_column`` and ``r_column`` is a covariate. An
    empty ``y`` field means the outcome is missing; if ``r_column`` is given
    it decides observation status instead and ``y`` must be present wherever
    it is 1. Row numbers in error messages count data rows from 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row expected") from None
        if y_column not in header:
            raise DataError(f"{path}: y column {y_column!r} not in header")
        if r_column is not None and r_column not in header:
            raise DataError(f"{path}: r column {r_column!r} not in header")
        iy = header.index(y_column)
        ir = header.index(r_column) if r_column is not None else None
        icov = [j for j, h in enumerate(header) if j not in (iy, ir)]
        if not icov:
            raise DataError(f"{path}: no covariate columns")
        xs, ys, rs = [], [], []
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"row {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            xs.append([_parse_float(row[j], lineno, header[j]) for j in icov])
            ytext = row[iy].strip()
            yval = math.nan if ytext == "" else _parse_float(ytext, lineno, y_column)
            if ir is None:
                rval = 0 if ytext == "" else 1
            else:
                rval = _parse_float(row[ir], lineno, r_column)
                if rval not in (0.0, 1.0):
                    raise DataError(f"row {lineno}: r must be 0 or 1, got {row[ir]!r}")
                rval = int(rval)
                if rval == 1 and not math.isfinite(yval):
                    raise DataError(f"row {lineno}: r=1 but y is missing")
            if rval == 1 and not math.isfinite(yval):
                raise DataError(f"row {lineno}: y is not finite")
            ys.append(yval)
            rs.append(rval)
    if not xs:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.array(xs), np.array(ys), np.array(rs), tuple(header[j] for j in icov))


def _fmt(v: float) -> str:
    return format(v, ".17g")


def save_csv(ds: Dataset, path, y_column: str = "y", r_column: str | None = "r") -> None:
    """Write ``ds`` so that :func:`load_csv` reproduces it bit for bit."""
    header = list(ds.columns) + [y_column] + ([r_column] if r_column else [])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(ds.n):
            row = [_fmt(v) for v in ds.x[i]]
            row.append(_fmt(ds.y[i]) if ds.r[i] else "")
            if r_column:
                row.append(str(int(ds.r[i])))
            w.writerow(row)


def split(ds: Dataset | int, fraction: float = 0.5, seed: int = 0) -> SplitIndices:
    """Random permutation of the rows; the first ``round(fraction * n)`` train."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    n = ds if isinstance(ds, (int, np.integer)) else ds.n
    n_train = int(round(fraction * n))
    if n_train < 1 or n_train > n - 1:
        raise ValueError(f"split of n={n} at fraction={fraction} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    return SplitIndices(perm[:n_train], perm[n_train:])


def as_index(idx: Sequence[int] | np.ndarray | None, n: int) -> np.ndarray:
    if idx is None:
        return np.arange(n)
    return np.asarray(idx, dtype=int)
