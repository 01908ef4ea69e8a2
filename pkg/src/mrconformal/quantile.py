"""Generalized-inverse quantiles and the check loss."""

from __future__ import annotations

import math

import numpy as np

__all__ = ["check_loss", "psi", "empirical_quantile", "weighted_quantile", "conformal_level"]

_CUM_TOL = 1e-12


def check_loss(u, tau: float):
    """rho_tau(u) = u (tau - 1{u < 0})."""
    u = np.asarray(u, dtype=float)
    return u * (tau - (u < 0))


def psi(u, tau: float):
    """Subgradient of the check loss, tau - 1{u < 0}."""
    return tau - (np.asarray(u) < 0).astype(float)


def _check_tau(tau):
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")


def empirical_quantile(values, tau: float) -> float:
    """Smallest ``s`` in ``values`` with ``#{v <= s} / n >= tau``."""
    _check_tau(tau)
    v = np.sort(np.asarray(values, dtype=float).ravel())
    n = v.size
    if n == 0:
        raise ValueError("cannot take the quantile of an empty sample")
    k = math.ceil(tau * n - 1e-9 * n)
    return float(v[min(max(k, 1), n) - 1])


def weighted_quantile(values, weights, tau: float) -> float:
    """Smallest ``s`` in ``values`` whose cumulative normalised weight reaches ``tau``.

    This is the left end of the root set of ``sum_i w_i psi_tau(v_i - q) = 0``
    when that set is an interval.
    """
    _check_tau(tau)
    v = np.asarray(values, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("cannot take the quantile of an empty sample")
    if w.shape != v.shape:
        raise ValueError("values and weights differ in length")
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative with a positive sum")
    order = np.argsort(v, kind="stable")
    cum = np.cumsum(w[order]) / w.sum()
    k = int(np.searchsorted(cum, tau - _CUM_TOL, side="left"))
    return float(v[order[min(k, v.size - 1)]])


def conformal_level(tau: float, n_eff: float) -> float:
    """Finite-sample adjusted level ``ceil((n_eff + 1) tau) / n_eff``, capped below 1."""
    adj = math.ceil((n_eff + 1) * tau - 1e-9) / n_eff
    return min(adj, 1.0 - 1e-12)
