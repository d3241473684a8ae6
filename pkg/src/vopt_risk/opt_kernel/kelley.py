"""Kelley's cutting-plane method for convex programs given by first-order oracles."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp

from .config import DEFAULT_TOLERANCES, Tolerances
from .lp import LinearProgram, LpSolution, solve_lp

logger = logging.getLogger(__name__)

Oracle = Callable[[np.ndarray], tuple]


@dataclass
class OracleProgram:
    """Convex program ``min f(x)`` s.t. ``h(x) <= 0``, linear rows and a box.

    Parameters
    ----------
    dim : int
        Number of decision variables.
    objective : ndarray or callable
        Either a cost vector (linear objective) or a callable returning
        ``(value, subgradient)``.
    constraints : callable, optional
        Returns ``(values, jacobian)`` for the vector of convex constraint
        functions; ``jacobian`` may be dense or scipy sparse with one row per
        constraint.
    lower, upper : ndarray
        Box bounds. Every coordinate must be bounded unless the linear rows
        keep the master LPs bounded.
    A_eq, b_eq, G, g : optional
        Linear constraints ``A_eq x = b_eq`` and ``G x >= g`` kept exactly in
        every master LP.
    """

    dim: int
    objective: Union[np.ndarray, Oracle]
    constraints: Optional[Oracle] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    A_eq: object = None
    b_eq: Optional[np.ndarray] = None
    G: object = None
    g: Optional[np.ndarray] = None


@dataclass
class KelleyResult:
    """Outcome of :func:`solve_kelley`.

    ``status`` is ``"optimal"``, ``"infeasible"`` or ``"budget"``. ``value`` is
    the objective at ``x`` and ``lower_bound`` the last cutting-plane bound.
    """

    status: str
    x: Optional[np.ndarray]
    value: float
    lower_bound: float
    violation: float
    iterations: int
    bounds_history: list = field(default_factory=list)
    master: Optional[LpSolution] = None
    n_cuts: int = 0


def solve_kelley(prog: OracleProgram, tol: float = DEFAULT_TOLERANCES.kelley, max_iter: int = 500,
                 x0: Optional[np.ndarray] = None, cut_threshold: Optional[float] = None,
                 tolerances: Tolerances = DEFAULT_TOLERANCES) -> KelleyResult:
    """Minimize an oracle-described convex program by outer linearization.

    The master LP accumulates tangent cuts of the objective (epigraph form) and
    of every constraint that is violated by more than ``cut_threshold`` at the
    current iterate. Terminates when the iterate violates no constraint by more
    than ``tol`` and the objective exceeds the master bound by at most ``tol``.
    """
    n = prog.dim
    linear = not callable(prog.objective)
    nv = n if linear else n + 1
    lower = np.full(n, -np.inf) if prog.lower is None else np.asarray(prog.lower, float)
    upper = np.full(n, np.inf) if prog.upper is None else np.asarray(prog.upper, float)
    lb = np.concatenate([lower, [] if linear else [-np.inf]])
    ub = np.concatenate([upper, [] if linear else [np.inf]])
    cost = np.zeros(nv)
    if linear:
        cost[:] = np.asarray(prog.objective, float)
    else:
        cost[n] = 1.0
    if cut_threshold is None:
        cut_threshold = 0.1 * tol

    def pad(M):
        if M is None:
            return None
        M = sp.csr_matrix(M, dtype=float)
        return M if linear else sp.hstack([M, sp.csr_matrix((M.shape[0], 1))], format="csr")

    A_eq = pad(prog.A_eq)
    b_eq = None if prog.b_eq is None else np.asarray(prog.b_eq, float)
    G_fixed = pad(prog.G)
    g_fixed = np.zeros(0) if prog.g is None else np.asarray(prog.g, float)
    cut_rows: list = []
    cut_rhs: list = []

    def evaluate(x):
        if linear:
            fval, fgrad = float(cost @ x), None
        else:
            fval, fgrad = prog.objective(x)
            fgrad = np.asarray(fgrad, float)
        if prog.constraints is None:
            return fval, fgrad, np.zeros(0), None
        vals, jac = prog.constraints(x)
        return fval, fgrad, np.atleast_1d(np.asarray(vals, float)), jac

    def add_cuts(x, fval, fgrad, vals, jac, force=False):
        if not linear:
            row = np.zeros(nv)
            row[:n] = -fgrad
            row[n] = 1.0
            cut_rows.append(sp.csr_matrix(row))
            cut_rhs.append(np.array([fval - fgrad @ x]))
        if vals.size:
            sel = np.flatnonzero(vals > (-np.inf if force else cut_threshold))
            if sel.size:
                J = sp.csr_matrix(jac)[sel]
                rows = -J if linear else sp.hstack([-J, sp.csr_matrix((sel.size, 1))])
                cut_rows.append(sp.csr_matrix(rows))
                cut_rhs.append(vals[sel] - J @ x)

    if x0 is None:
        x0 = np.where(np.isfinite(lower) & np.isfinite(upper), 0.5 * (lower + upper),
                      np.where(np.isfinite(lower), lower, np.where(np.isfinite(upper), upper, 0.0)))
    x = np.clip(np.asarray(x0, float), lower, upper)
    add_cuts(x, *evaluate(x), force=True)

    history = []
    lower_bound = -np.inf
    best = None
    sol = None
    for it in range(1, max_iter + 1):
        Gc = sp.vstack(([G_fixed] if G_fixed is not None else []) + cut_rows, format="csr")
        gc = np.concatenate([g_fixed] + cut_rhs)
        lp = LinearProgram(cost, A_eq, b_eq, Gc, gc, lb, ub)
        sol = solve_lp(lp, method="highs", tol=tolerances)
        if sol.status == "infeasible":
            return KelleyResult("infeasible", None, np.inf, np.inf, np.inf, it, history, sol,
                                len(gc))
        if not sol.optimal:
            logger.warning("Kelley master LP ended with status %s", sol.status)
            break
        xt = sol.x
        x = xt[:n]
        lower_bound = max(lower_bound, sol.value)
        history.append(lower_bound)
        fval, fgrad, vals, jac = evaluate(x)
        viol = float(max(0.0, vals.max())) if vals.size else 0.0
        gap = fval - lower_bound
        best = (x.copy(), fval, viol)
        if viol <= tol and gap <= tol:
            return KelleyResult("optimal", x.copy(), fval, lower_bound, viol, it, history, sol,
                                len(gc))
        add_cuts(x, fval, fgrad, vals, jac)
    if best is None:
        return KelleyResult("budget", None, np.nan, lower_bound, np.inf, max_iter, history, sol)
    return KelleyResult("budget", best[0], best[1], lower_bound, best[2], max_iter, history, sol)


__all__ = ["OracleProgram", "KelleyResult", "solve_kelley"]
