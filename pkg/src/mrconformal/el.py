"""Empirical-likelihood calibration weights.

Given centered moment rows ``v_i`` over the complete cases, the weights are
``w_i = 1 / (m (1 + rho . v_i))`` where ``rho`` minimises the convex dual

    F(rho) = -(1/m) sum_i log(1 + rho . v_i)

subject to ``1 + rho . v_i > 0`` for every row. At the minimiser the weights
sum to one and balance every moment column: ``sum_i w_i v_i = 0``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .exceptions import ConvergenceError, SolverError

__all__ = ["ELSolution", "solve_el", "independent_columns"]

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4
MAX_HALVINGS = 60
FEASIBILITY_TOL = 1e-6


@dataclass(frozen=True)
class ELSolution:
    rho: np.ndarray
    weights: np.ndarray
    objective: float
    iterations: int
    grad_norm: float
    dropped: tuple[int, ...] = ()
    history: tuple[float, ...] = field(default=(), repr=False)


def independent_columns(v: np.ndarray, tol: float = 1e-12) -> list[int]:
    """Indices of columns kept after dropping trailing linearly dependent ones.

    Column ``c`` is dropped when its residual after projection on the columns
    before it is ``<= tol`` times the largest column norm.
    """
    if v.shape[1] == 0:
        return []
    scale = np.max(np.linalg.norm(v, axis=0))
    if scale == 0.0:
        return []
    R = np.linalg.qr(v, mode="r")
    k = min(v.shape)
    diag = np.abs(np.diag(R))
    keep = [c for c in range(k) if diag[c] > tol * scale]
    return keep


def _objective(rho, v):
    z = 1.0 + v @ rho
    if np.any(z <= 0.0):
        return np.inf
    return -float(np.mean(np.log(z)))


def _newton_direction(H, g):
    try:
        return -scipy.linalg.cho_solve(scipy.linalg.cho_factor(H), g)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        pass
    boost = 1e-10 * np.trace(H) / H.shape[0]
    boost = boost if boost > 0 else 1e-10
    for _ in range(12):
        try:
            Hb = H + boost * np.eye(H.shape[0])
            return -scipy.linalg.cho_solve(scipy.linalg.cho_factor(Hb), g)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            boost *= 10.0
    raise SolverError("Newton system could not be factorised")


def solve_el(
    v,
    tol: float = 1e-8,
    max_iter: int = 200,
    rho0=None,
    drop_tol: float = 1e-12,
) -> ELSolution:
    """Solve for the EL multiplier by damped Newton with backtracking.

    Parameters
    ----------
    v : array_like, shape (m, d)
        Centered moment evaluations, one row per complete case.
    tol : float
        Convergence threshold on the Euclidean norm of the gradient of F.
    max_iter : int
        Maximum number of Newton iterations.
    rho0 : array_like, optional
        Starting multiplier (defaults to zero, which is always feasible).
    drop_tol : float
        Relative tolerance for discarding exactly collinear moment columns.

    Returns
    -------
    ELSolution
        ``rho`` has length ``d``; entries of dropped columns are zero.

    Raises
    ------
    SolverError
        If no feasible Armijo step is found after 60 halvings.
    ConvergenceError
        If ``max_iter`` iterations pass without reaching ``tol``.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    m, d = v.shape
    if m == 0:
        raise SolverError("no complete cases to weight")
    if not np.all(np.isfinite(v)):
        raise SolverError("moment matrix has non-finite entries")
    if tol <= 0:
        raise ValueError("tol must be positive")

    keep = independent_columns(v, drop_tol)
    dropped = tuple(c for c in range(d) if c not in keep)
    if dropped:
        log.debug("el: dropped collinear moment columns %s", dropped)
    vk = v[:, keep]

    rho = np.zeros(len(keep))
    if rho0 is not None:
        rho = np.asarray(rho0, dtype=float)[keep].copy()
        if np.any(1.0 + vk @ rho <= 0.0):
            rho[:] = 0.0
    F = _objective(rho, vk)
    history = [F]
    it = 0
    gnorm = 0.0
    while True:
        if vk.shape[1] == 0:
            break
        z = 1.0 + vk @ rho
        u = vk / z[:, None]
        g = -u.mean(axis=0)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            break
        if it >= max_iter:
            raise ConvergenceError(
                f"EL solver did not converge in {max_iter} iterations (|grad|={gnorm:.3g})",
                grad_norm=gnorm,
            )
        H = u.T @ u / m
        step = _newton_direction(H, g)
        slope = float(g @ step)
        if slope >= 0:
            # boosted Hessian can lose descent in float noise; fall back to gradient
            step, slope = -g, -gnorm**2
        t = 1.0
        for _ in range(MAX_HALVINGS):
            cand = rho + t * step
            Fc = _objective(cand, vk)
            if np.isfinite(Fc) and Fc <= F + ARMIJO_C * t * slope:
                break
            t *= 0.5
        else:
            raise SolverError(
                f"no feasible descent step after {MAX_HALVINGS} halvings (|grad|={gnorm:.3g})"
            )
        rho, F = cand, Fc
        history.append(F)
        it += 1

    full = np.zeros(d)
    full[keep] = rho
    w = 1.0 / (m * (1.0 + vk @ rho))
    # sum(w) = 1 + rho.g. On an infeasible problem rho runs off to infinity and
    # the gradient decays like 1/|rho| while the weights collapse towards zero.
    total = w.sum()
    if abs(total - 1.0) > FEASIBILITY_TOL:
        raise SolverError(
            "moment constraints are infeasible: zero is not inside the convex hull "
            f"of the moment rows (sum of weights {total:.3g}, |rho|={np.linalg.norm(rho):.3g})"
        )
    w = w / total
    return ELSolution(full, w, F, it, gnorm, dropped, tuple(history))
