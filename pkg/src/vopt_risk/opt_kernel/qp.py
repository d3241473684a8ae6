"""Proximally regularized concave QPs, solved with the Clarabel interior point method.

The problem class is::

    maximize    c @ u - rho * sum_{j in prox} (u_j - center_j)**2
    subject to  E @ u == e
                G @ u >= g
                u_j >= 0            for j in nonneg

Multipliers are reported so that, at a solution,
``grad f(u) + E.T @ pi + G.T @ y + nu == 0`` with ``y >= 0`` and ``nu >= 0``
(``nu`` is scattered onto the full variable vector).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import clarabel
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .config import DEFAULT_TOLERANCES, Tolerances


@dataclass(frozen=True)
class RegularizedQP:
    """Data of a proximally regularized QP (see module docstring)."""

    c: np.ndarray
    rho: float
    prox: np.ndarray
    center: np.ndarray
    E: object = None
    e: Optional[np.ndarray] = None
    G: object = None
    g: Optional[np.ndarray] = None
    nonneg: Optional[np.ndarray] = None

    def __post_init__(self):
        c = np.asarray(self.c, float).ravel()
        n = c.size
        prox = np.asarray(self.prox, dtype=int).ravel()
        center = np.asarray(self.center, float).ravel()
        if center.size != prox.size:
            raise ValueError("center must match the prox index set")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        E = sp.csr_matrix((0, n)) if self.E is None else sp.csr_matrix(self.E, dtype=float)
        G = sp.csr_matrix((0, n)) if self.G is None else sp.csr_matrix(self.G, dtype=float)
        e = np.zeros(E.shape[0]) if self.e is None else np.asarray(self.e, float).ravel()
        g = np.zeros(G.shape[0]) if self.g is None else np.asarray(self.g, float).ravel()
        nn = np.zeros(0, int) if self.nonneg is None else np.asarray(self.nonneg, int).ravel()
        if E.shape[1] != n or G.shape[1] != n or e.size != E.shape[0] or g.size != G.shape[0]:
            raise ValueError("inconsistent QP dimensions")
        for name, val in (("c", c), ("center", center), ("e", e), ("g", g)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "prox", prox)
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "nonneg", nn)

    @property
    def n(self) -> int:
        return self.c.size

    def objective(self, u: np.ndarray) -> float:
        d = u[self.prox] - self.center
        return float(self.c @ u - self.rho * d @ d)

    def gradient(self, u: np.ndarray) -> np.ndarray:
        grad = self.c.copy()
        grad[self.prox] -= 2.0 * self.rho * (u[self.prox] - self.center)
        return grad


@dataclass
class QpSolution:
    """Outcome of :func:`solve_qp`; ``status`` is ``"optimal"``, ``"infeasible"`` or ``"failed"``."""

    status: str
    u: Optional[np.ndarray] = None
    value: float = np.nan
    duals_eq: Optional[np.ndarray] = None
    duals_ineq: Optional[np.ndarray] = None
    duals_nonneg: Optional[np.ndarray] = None
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def solve_qp(qp: RegularizedQP, tol: Tolerances = DEFAULT_TOLERANCES, max_iter: int = 200,
             polish: bool = True) -> QpSolution:
    """Solve a :class:`RegularizedQP`.

    The interior point solution is refined by an active-set polish step unless
    ``polish`` is false.
    """
    n = qp.n
    diag = np.zeros(n)
    np.add.at(diag, qp.prox, 2.0 * qp.rho)
    P = sp.diags(diag, format="csc")
    q = -qp.c.copy()
    np.add.at(q, qp.prox, -2.0 * qp.rho * qp.center)
    m_e, m_g, m_n = qp.E.shape[0], qp.G.shape[0], qp.nonneg.size
    Nn = sp.csr_matrix((-np.ones(m_n), (np.arange(m_n), qp.nonneg)), shape=(m_n, n))
    A = sp.vstack([qp.E, -qp.G, Nn], format="csc")
    b = np.concatenate([qp.e, -qp.g, np.zeros(m_n)])
    cones = []
    if m_e:
        cones.append(clarabel.ZeroConeT(m_e))
    if m_g + m_n:
        cones.append(clarabel.NonnegativeConeT(m_g + m_n))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol.qp
    settings.tol_gap_rel = tol.qp
    settings.tol_feas = tol.qp
    settings.tol_ktratio = 1e-8
    solver = clarabel.DefaultSolver(P, q, A, b, cones, settings)
    sol = solver.solve()
    status = str(sol.status)
    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return QpSolution("infeasible", iterations=sol.iterations)
    if status not in ("Solved", "AlmostSolved"):
        return QpSolution("failed", iterations=sol.iterations)
    u = np.asarray(sol.x)
    z = np.asarray(sol.z)
    nu = np.zeros(n)
    np.add.at(nu, qp.nonneg, np.maximum(z[m_e + m_g:], 0.0))
    out = QpSolution("optimal", u=u, value=qp.objective(u), duals_eq=-z[:m_e],
                     duals_ineq=np.maximum(z[m_e:m_e + m_g], 0.0), duals_nonneg=nu,
                     iterations=sol.iterations)
    if polish:
        out = _polish(qp, out, diag)
    return out


def _polish(qp: RegularizedQP, sol: QpSolution, diag: np.ndarray, delta: float = 1e-9,
            refine: int = 5) -> QpSolution:
    """Re-solve the equality KKT system on the active set guessed from an interior point.

    Interior point iterates approach degenerate solutions only at the square
    root of the gap tolerance; fixing the active set recovers the vertex of the
    active face to machine precision. The polished point is kept only if it is
    feasible, has dual-feasible multipliers and does not worsen the KKT residual.
    """
    u0 = sol.u
    n = qp.n
    slack = qp.G @ u0 - qp.g
    act_g = np.flatnonzero(sol.duals_ineq > slack)
    nn = np.unique(qp.nonneg)
    act_n = nn[sol.duals_nonneg[nn] > u0[nn]]
    Na = sp.csr_matrix((np.ones(act_n.size), (np.arange(act_n.size), act_n)), shape=(act_n.size, n))
    A = sp.vstack([qp.E, qp.G[act_g], Na], format="csc")
    rhs_a = np.concatenate([qp.e, qp.g[act_g], np.zeros(act_n.size)])
    m = A.shape[0]
    center_full = np.zeros(n)
    np.add.at(center_full, qp.prox, 2.0 * qp.rho * qp.center)
    H = sp.diags(diag, format="csc")
    K = sp.bmat([[H, A.T], [A, None]], format="csc")
    reg = sp.diags(np.concatenate([np.full(n, delta), np.full(m, -delta)]), format="csc")
    rhs = np.concatenate([qp.c + center_full, rhs_a])
    try:
        lu = spla.splu((K + reg).tocsc())
    except RuntimeError:
        return sol
    w = lu.solve(rhs)
    for _ in range(refine):
        w = w + lu.solve(rhs - K @ w)
    if not np.all(np.isfinite(w)):
        return sol
    u = w[:n]
    # stationarity H u + A^T w_d = c + H center, i.e. grad f = A^T w_d, so duals are -w_d
    duals = -w[n:]
    m_e, m_a = qp.E.shape[0], act_g.size
    y = np.zeros(qp.G.shape[0])
    y[act_g] = duals[m_e:m_e + m_a]
    nu = np.zeros(n)
    nu[act_n] = duals[m_e + m_a:]
    tol = 1e-9
    if y.min(initial=0.0) < -tol or nu.min(initial=0.0) < -tol:
        return sol
    if qp.G.shape[0] and (qp.G @ u - qp.g).min() < -tol:
        return sol
    if nn.size and u[nn].min() < -tol:
        return sol
    u[nn] = np.maximum(u[nn], 0.0)
    cand = QpSolution("optimal", u=u, value=qp.objective(u), duals_eq=duals[:m_e],
                      duals_ineq=np.maximum(y, 0.0), duals_nonneg=np.maximum(nu, 0.0),
                      iterations=sol.iterations)
    if qp_kkt_residual(qp, cand) > max(10.0 * qp_kkt_residual(qp, sol), 1e-9):
        return sol
    return cand


def qp_kkt_residual(qp: RegularizedQP, sol: QpSolution) -> float:
    """Largest KKT violation (stationarity, feasibility, complementarity)."""
    u = sol.u
    res = [np.abs(qp.gradient(u) + qp.E.T @ sol.duals_eq + qp.G.T @ sol.duals_ineq
                  + sol.duals_nonneg).max()]
    if qp.E.shape[0]:
        res.append(np.abs(qp.E @ u - qp.e).max())
    if qp.G.shape[0]:
        slack = qp.G @ u - qp.g
        res.append(max(0.0, -slack.min()))
        res.append(np.abs(slack * sol.duals_ineq).max())
    if qp.nonneg.size:
        res.append(max(0.0, -u[qp.nonneg].min()))
        res.append(np.abs(u[qp.nonneg] * sol.duals_nonneg[qp.nonneg]).max())
    return float(max(res))


__all__ = ["RegularizedQP", "QpSolution", "solve_qp", "qp_kkt_residual"]
