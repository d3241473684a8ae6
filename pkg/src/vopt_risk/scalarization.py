"""Direct (extensive form) solvers for the two scalarizations.

* ``P1(w)``: minimize ``w @ z`` over feasible ``(x, y)`` and ``z in R(C x + Q y)``.
* ``P2(v)``: minimize ``alpha`` such that ``v + alpha * 1 in R(C x + Q y)``.

CVaR problems become one sparse LP through the Rockafellar-Uryasev
representation. Entropic problems are solved by the cutting-plane method on an
extended formulation with one epigraph variable ``e_i^j <= U^j(u_i^j - z^j)``
per scenario and objective, which is exact because the dual cone generators
are nonnegative.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .model import TwoStageProblem, cost_bounds, extensive_constraints
from .opt_kernel import LinearProgram, OracleProgram, solve_kelley, solve_lp
from .risk import CVaR, Entropic, RiskMeasure

logger = logging.getLogger(__name__)


class ScalarizationError(RuntimeError):
    """Raised when a scalarized problem cannot be solved."""


@dataclass
class ScalarSolveResult:
    """Solution of one scalarized problem.

    Attributes
    ----------
    x : ndarray
        First-stage decision (``M``).
    y : ndarray
        Recourse decisions, shape ``(I, N)``.
    z : ndarray or None
        Attaining point of ``R(C x + Q y)`` (``P1``) or ``v + alpha * 1`` (``P2``).
    alpha : float or None
        Entry height (``P2`` only).
    value : float
        Objective at the returned point (``w @ z`` or ``alpha``).
    bound : float
        Lower bound on the optimal value certified by the solver.
    gamma : ndarray or None
        Normal of a supporting halfspace of the upper image at ``z`` (``P2`` only).
    backend : str
    diagnostics : dict
    """

    x: np.ndarray
    y: np.ndarray
    z: Optional[np.ndarray]
    value: float
    bound: float
    backend: str
    alpha: Optional[float] = None
    gamma: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def gap(self) -> float:
        return self.value - self.bound


def _layout(problem: TwoStageProblem, extra: dict) -> dict:
    """Column offsets of the stacked variable vector ``(x, y, *extra)``."""
    off = {"x": 0, "y": problem.M}
    pos = problem.M + problem.I * problem.N
    for name, size in extra.items():
        off[name] = pos
        pos += size
    off["n"] = pos
    return off


def _cost_rows(problem: TwoStageProblem, off: dict) -> sp.csr_matrix:
    """Sparse map from the variable vector to the costs ``u_i^j`` (row ``i*J + j``)."""
    I, J, M, N = problem.I, problem.J, problem.M, problem.N
    Cx = sp.kron(np.ones((I, 1)), sp.csr_matrix(problem.C))
    Qy = sp.block_diag([sp.csr_matrix(s.Q) for s in problem.scenarios])
    rows = sp.hstack([Cx, Qy], format="csr")
    return sp.hstack([rows, sp.csr_matrix((I * J, off["n"] - M - I * N))], format="csr")


def _split(problem: TwoStageProblem, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    M, N, I = problem.M, problem.N, problem.I
    x = np.maximum(v[:M], 0.0)
    y = np.maximum(v[M:M + I * N].reshape(I, N), 0.0)
    return x, y


def _normalize_gamma(g: np.ndarray) -> np.ndarray:
    g = np.maximum(np.asarray(g, float), 0.0)
    s = g.sum()
    if s <= 0:
        raise ScalarizationError("dual weight vanished")
    return g / s


# --------------------------------------------------------------------------
# CVaR: one LP
# --------------------------------------------------------------------------


def _cvar_lp(problem: TwoStageProblem, R: CVaR, w: Optional[np.ndarray], v: Optional[np.ndarray]):
    I, J = problem.I, problem.J
    p = problem.p
    extra = {"t": J, "s": I * J, "z": J}
    if v is not None:
        extra["a"] = 1
    off = _layout(problem, extra)
    n = off["n"]
    E_ext, e_ext = extensive_constraints(problem)
    E_rows = [sp.hstack([E_ext, sp.csr_matrix((E_ext.shape[0], n - E_ext.shape[1]))], format="csr")]
    e_rows = [e_ext]
    if v is not None:
        # z - alpha * 1 = v
        Z = sp.lil_matrix((J, n))
        for j in range(J):
            Z[j, off["z"] + j] = 1.0
            Z[j, off["a"]] = -1.0
        E_rows.append(Z.tocsr())
        e_rows.append(np.asarray(v, float))
    # s_i^j - u_i^j + t^j >= 0
    U = _cost_rows(problem, off)
    St = sp.lil_matrix((I * J, n))
    for i in range(I):
        for j in range(J):
            St[i * J + j, off["s"] + i * J + j] = 1.0
            St[i * J + j, off["t"] + j] = 1.0
    G1 = St.tocsr() - U
    # cone rows: g_k @ (z - t - sum_i p_i s_i / (1 - nu))
    S = R.dual_generators
    G2 = sp.lil_matrix((S.shape[0], n))
    for k, gk in enumerate(S):
        for j in range(J):
            G2[k, off["z"] + j] = gk[j]
            G2[k, off["t"] + j] = -gk[j]
            for i in range(I):
                G2[k, off["s"] + i * J + j] = -gk[j] * p[i] / (1.0 - R.nu[j])
    G = sp.vstack([G1, G2.tocsr()], format="csr")
    g = np.zeros(G.shape[0])
    c = np.zeros(n)
    if v is None:
        c[off["z"]:off["z"] + J] = w
    else:
        c[off["a"]] = 1.0
    lb = np.zeros(n)
    lb[off["t"]:off["t"] + J] = -np.inf
    lb[off["z"]:off["z"] + J] = -np.inf
    if v is not None:
        lb[off["a"]] = -np.inf
    lp = LinearProgram(c, sp.vstack(E_rows, format="csr"), np.concatenate(e_rows), G, g, lb)
    return lp, off


def _solve_cvar(problem, R: CVaR, w=None, v=None) -> ScalarSolveResult:
    lp, off = _cvar_lp(problem, R, w, v)
    sol = solve_lp(lp, method="highs")
    if sol.status == "unbounded":
        raise ScalarizationError("scalarized problem is unbounded (weight outside the dual cone?)")
    if not sol.optimal:
        raise ScalarizationError(f"LP ended with status {sol.status}")
    x, y = _split(problem, sol.x)
    u = problem.costs(x, y)
    diag = {"lp_iterations": sol.iterations, "lp_method": sol.method}
    if v is None:
        w = np.asarray(w, float)
        _, z = R.scalarize(w, u, problem.p)
        return ScalarSolveResult(x, y, z, float(w @ z), sol.value, "direct", diagnostics=diag)
    alpha = R.entry_alpha(u, problem.p, v)
    m_eq = lp.m_eq
    gamma = _normalize_gamma(-sol.duals_eq[m_eq - problem.J:])
    z = np.asarray(v, float) + alpha
    return ScalarSolveResult(x, y, z, alpha, sol.value, "direct", alpha=alpha, gamma=gamma,
                             diagnostics=diag)


# --------------------------------------------------------------------------
# Entropic: cutting planes on the extended formulation
# --------------------------------------------------------------------------


def _z_box(problem: TwoStageProblem, R: Entropic) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = cost_bounds(problem)
    delta = R.delta
    S = R.dual_generators
    J = problem.J
    spread = np.zeros(J)
    for j in range(J):
        cand = [np.sum(np.delete(s, j) / np.delete(delta, j)) / s[j] for s in S if s[j] > 1e-12]
        if not cand:
            raise ScalarizationError("the scalarization is unbounded below in objective %d" % (j + 1))
        spread[j] = min(cand)
    zlo = lo.min(axis=1) - np.log1p(delta * spread) / delta - 1.0
    zhi = hi.max(axis=1) + 40.0 / delta
    return zlo, zhi


def _solve_entropic(problem, R: Entropic, w=None, v=None, tol: float = 1e-9,
                    max_iter: int = 500) -> ScalarSolveResult:
    I, J = problem.I, problem.J
    p, delta = problem.p, R.delta
    extra = {"z": J, "e": I * J}
    if v is not None:
        extra["a"] = 1
    off = _layout(problem, extra)
    n = off["n"]
    E_ext, e_ext = extensive_constraints(problem)
    E_rows = [sp.hstack([E_ext, sp.csr_matrix((E_ext.shape[0], n - E_ext.shape[1]))], format="csr")]
    e_rows = [e_ext]
    if v is not None:
        Z = sp.lil_matrix((J, n))
        for j in range(J):
            Z[j, off["z"] + j] = 1.0
            Z[j, off["a"]] = -1.0
        E_rows.append(Z.tocsr())
        e_rows.append(np.asarray(v, float))
    S = R.dual_generators
    Gk = sp.lil_matrix((S.shape[0], n))
    for k, sk in enumerate(S):
        for i in range(I):
            for j in range(J):
                Gk[k, off["e"] + i * J + j] = p[i] * sk[j]
    zlo, zhi = _z_box(problem, R)
    lower = np.zeros(n)
    upper = np.full(n, np.inf)
    lower[off["z"]:off["z"] + J] = zlo
    upper[off["z"]:off["z"] + J] = zhi
    lower[off["e"]:off["e"] + I * J] = -np.inf
    upper[off["e"]:off["e"] + I * J] = np.tile(1.0 / delta, I)
    if v is not None:
        lower[off["a"]] = -np.inf
    # keep x, y inside the (bounded) scenario polytopes in the first master LPs
    U = _cost_rows(problem, off)
    rows_j = np.tile(np.arange(J), I)
    dvec = delta[rows_j]
    zcol = off["z"] + rows_j
    ecol = off["e"] + np.arange(I * J)

    def constraints(xv):
        u = U @ xv
        arg = np.clip(dvec * (u - xv[zcol]), -700.0, 700.0)
        ex = np.exp(arg)
        vals = xv[ecol] + np.expm1(arg) / dvec
        jac = sp.diags(ex) @ U
        jac = jac + sp.csr_matrix((np.ones(I * J), (np.arange(I * J), ecol)), shape=(I * J, n))
        jac = jac + sp.csr_matrix((-ex, (np.arange(I * J), zcol)), shape=(I * J, n))
        return vals, jac

    c = np.zeros(n)
    if v is None:
        c[off["z"]:off["z"] + J] = w
    else:
        c[off["a"]] = 1.0
    prog = OracleProgram(n, c, constraints, lower, upper, A_eq=sp.vstack(E_rows, format="csr"),
                         b_eq=np.concatenate(e_rows), G=Gk.tocsr(), g=np.zeros(S.shape[0]))
    x0 = np.zeros(n)
    x0[off["z"]:off["z"] + J] = np.minimum(np.maximum(0.0, zlo), zhi)
    res = solve_kelley(prog, tol=tol, max_iter=max_iter, x0=x0)
    if res.status == "infeasible":
        raise ScalarizationError("scalarized problem is infeasible")
    if res.x is None:
        raise ScalarizationError("cutting-plane method produced no iterate")
    x, y = _split(problem, res.x)
    u = problem.costs(x, y)
    diag = {"kelley_iterations": res.iterations, "kelley_status": res.status,
            "kelley_violation": res.violation, "kelley_cuts": res.n_cuts}
    flagged = res.status != "optimal"
    if flagged:
        logger.warning("entropic direct solve stopped with status %s (violation %.2e)",
                       res.status, res.violation)
    diag["flagged"] = flagged
    if v is None:
        w = np.asarray(w, float)
        _, z = R.scalarize(w, u, p)
        return ScalarSolveResult(x, y, z, float(w @ z), res.lower_bound, "direct", diagnostics=diag)
    alpha = R.entry_alpha(u, p, v)
    m_eq = res.master.duals_eq.size
    gamma = _normalize_gamma(-res.master.duals_eq[m_eq - J:])
    z = np.asarray(v, float) + alpha
    return ScalarSolveResult(x, y, z, alpha, res.lower_bound, "direct", alpha=alpha, gamma=gamma,
                             diagnostics=diag)


# --------------------------------------------------------------------------
# public entry points
# --------------------------------------------------------------------------


def solve_p1_direct(problem: TwoStageProblem, R: RiskMeasure, w) -> ScalarSolveResult:
    """Solve the weighted-sum scalarization ``P1(w)`` in extensive form."""
    w = np.asarray(w, float).ravel()
    if w.size != problem.J or np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be nonnegative, nonzero and have J entries")
    if isinstance(R, CVaR):
        if not R.in_dual_cone(w):
            raise ScalarizationError("weight outside the dual cone: the scalarization is unbounded")
        return _solve_cvar(problem, R, w=w)
    if isinstance(R, Entropic):
        return _solve_entropic(problem, R, w=w)
    raise TypeError(f"unsupported risk measure {type(R).__name__}")


def solve_p2_direct(problem: TwoStageProblem, R: RiskMeasure, v) -> ScalarSolveResult:
    """Solve the entry-height problem ``P2(v)`` in extensive form, with a dual weight."""
    v = np.asarray(v, float).ravel()
    if v.size != problem.J:
        raise ValueError("reference point must have J entries")
    if isinstance(R, CVaR):
        return _solve_cvar(problem, R, v=v)
    if isinstance(R, Entropic):
        return _solve_entropic(problem, R, v=v)
    raise TypeError(f"unsupported risk measure {type(R).__name__}")


def ld2_value(problem: TwoStageProblem, R: RiskMeasure, gamma, v) -> float:
    """Dual objective of ``P2(v)`` at a weight ``gamma`` with ``gamma @ 1 = 1``.

    Equals ``P1(gamma) - gamma @ v``; evaluated with one direct ``P1`` solve
    (its certified lower bound).
    """
    gamma = np.asarray(gamma, float)
    res = solve_p1_direct(problem, R, gamma)
    return float(res.bound - gamma @ np.asarray(v, float))


__all__ = ["ScalarSolveResult", "ScalarizationError", "solve_p1_direct", "solve_p2_direct",
           "ld2_value"]
