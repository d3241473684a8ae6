"""Linear programming: a dense revised simplex and a HiGHS route.

Problems are stated as::

    minimize    c @ v
    subject to  A_eq @ v == b_eq
                G @ v >= g
                lb <= v <= ub

Dual values are shadow prices: ``duals_eq[r]`` is the derivative of the optimal
value with respect to ``b_eq[r]`` and ``duals_ineq[r] >= 0`` is the derivative
with respect to ``g[r]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, lu_factor, lu_solve
from scipy.optimize import linprog

from .config import DEFAULT_TOLERANCES, Tolerances

logger = logging.getLogger(__name__)

# Problems with at most this many matrix entries go to the dense simplex
# when ``method="auto"``.
_DENSE_LIMIT = 20000


def _as_matrix(M, n: int) -> np.ndarray | sp.spmatrix:
    if M is None:
        return np.zeros((0, n))
    if sp.issparse(M):
        return sp.csr_matrix(M, dtype=float)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return np.zeros((0, n))
    return M


@dataclass(frozen=True)
class LinearProgram:
    """Data of a linear program (see module docstring for the form).

    ``A_eq`` and ``G`` may be dense arrays or scipy sparse matrices.
    """

    c: np.ndarray
    A_eq: object = None
    b_eq: Optional[np.ndarray] = None
    G: object = None
    g: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        n = c.size
        A = _as_matrix(self.A_eq, n)
        G = _as_matrix(self.G, n)
        b = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, float).ravel()
        g = np.zeros(0) if self.g is None else np.asarray(self.g, float).ravel()
        lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, float).ravel()
        ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, float).ravel()
        if A.shape[1] != n or G.shape[1] != n:
            raise ValueError("constraint matrices must have len(c) columns")
        if A.shape[0] != b.size or G.shape[0] != g.size:
            raise ValueError("right-hand side length does not match row count")
        if lb.size != n or ub.size != n:
            raise ValueError("bound vectors must have len(c) entries")
        for name, arr in (("c", c), ("b_eq", b), ("g", g)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        if np.any(np.isnan(lb)) or np.any(np.isnan(ub)) or np.any(lb == np.inf) or np.any(ub == -np.inf):
            raise ValueError("invalid variable bounds")
        if np.any(lb > ub):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A_eq", A)
        object.__setattr__(self, "b_eq", b)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m_eq(self) -> int:
        return self.b_eq.size

    @property
    def m_ineq(self) -> int:
        return self.g.size

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.A_eq) or sp.issparse(self.G)

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        A = self.A_eq.toarray() if sp.issparse(self.A_eq) else self.A_eq
        G = self.G.toarray() if sp.issparse(self.G) else self.G
        return A, G

    def dump(self, path_or_stream) -> None:
        """Write the program as plain text (one labelled block per array)."""
        own = isinstance(path_or_stream, str)
        fh = open(path_or_stream, "w") if own else path_or_stream
        try:
            A, G = self.dense()
            for name, arr in (("c", self.c), ("A_eq", A), ("b_eq", self.b_eq), ("G", G),
                              ("g", self.g), ("lb", self.lb), ("ub", self.ub)):
                arr2 = np.atleast_2d(arr)
                fh.write(f"# {name} {arr2.shape[0]} {arr2.shape[1]}\n")
                np.savetxt(fh, arr2, fmt="%.17g")
        finally:
            if own:
                fh.close()


@dataclass
class LpSolution:
    """Outcome of :func:`solve_lp`.

    ``status`` is one of ``"optimal"``, ``"infeasible"``, ``"unbounded"`` or
    ``"stalled"``. Primal and dual arrays are only meaningful when optimal.
    """

    status: str
    x: Optional[np.ndarray] = None
    value: float = np.nan
    duals_eq: Optional[np.ndarray] = None
    duals_ineq: Optional[np.ndarray] = None
    reduced_costs: Optional[np.ndarray] = None
    iterations: int = 0
    method: str = ""
    basis: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


# --------------------------------------------------------------------------
# Dense revised simplex
# --------------------------------------------------------------------------


class _Standard:
    """Standard form ``min c@s, A@s = b, s >= 0`` of a :class:`LinearProgram`."""

    def __init__(self, lp: LinearProgram):
        E, G = lp.dense()
        n = lp.n
        lb, ub = lp.lb, lp.ub
        free = ~np.isfinite(lb)
        shift = np.where(free, 0.0, lb)
        # columns: shifted vars, negative parts of free vars, slacks
        neg_idx = np.flatnonzero(free)
        ub_idx = np.flatnonzero(np.isfinite(ub))
        n_neg, m_e, m_g, m_u = neg_idx.size, E.shape[0], G.shape[0], ub_idx.size
        ns = n + n_neg + m_g + m_u
        m = m_e + m_g + m_u
        A = np.zeros((m, ns))
        b = np.zeros(m)
        A[:m_e, :n] = E
        A[:m_e, n:n + n_neg] = -E[:, neg_idx]
        b[:m_e] = lp.b_eq - E @ shift
        r = m_e
        A[r:r + m_g, :n] = G
        A[r:r + m_g, n:n + n_neg] = -G[:, neg_idx]
        A[r:r + m_g, n + n_neg:n + n_neg + m_g] = -np.eye(m_g)
        b[r:r + m_g] = lp.g - G @ shift
        r += m_g
        for k, j in enumerate(ub_idx):
            A[r + k, j] = 1.0
            if free[j]:
                A[r + k, n + int(np.searchsorted(neg_idx, j))] = -1.0
            A[r + k, n + n_neg + m_g + k] = 1.0
            b[r + k] = ub[j] - shift[j]
        c = np.concatenate([lp.c, -lp.c[neg_idx], np.zeros(m_g + m_u)])
        self.A, self.b, self.c = A, b, c
        self.n, self.neg_idx, self.shift = n, neg_idx, shift
        self.m_e, self.m_g, self.m_u = m_e, m_g, m_u
        self.const = float(lp.c @ shift)

    def recover_x(self, s: np.ndarray) -> np.ndarray:
        x = s[:self.n] + self.shift
        x[self.neg_idx] -= s[self.n:self.n + self.neg_idx.size]
        return x


def _primal_simplex(A, b, c, basis, tol: Tolerances, max_iter: int):
    """Revised primal simplex from a feasible basis.

    Returns ``(status, basis, iterations)``.
    """
    m, n = A.shape
    basis = np.array(basis, dtype=int)
    degenerate = 0
    bland = False
    in_basis = np.zeros(n, dtype=bool)
    for it in range(max_iter):
        in_basis[:] = False
        in_basis[basis] = True
        try:
            lu = lu_factor(A[:, basis], check_finite=False)
        except (LinAlgError, ValueError):
            return "stalled", basis, it
        xB = lu_solve(lu, b, check_finite=False)
        y = lu_solve(lu, c[basis], trans=1, check_finite=False)
        d = c - A.T @ y
        d[in_basis] = 0.0
        cand = np.flatnonzero(d < -tol.lp_optimality)
        if cand.size == 0:
            return "optimal", basis, it
        j = int(cand[0]) if bland else int(cand[np.argmin(d[cand])])
        u = lu_solve(lu, A[:, j], check_finite=False)
        pos = np.flatnonzero(u > tol.pivot * max(1.0, np.abs(u).max()))
        if pos.size == 0:
            return "unbounded", basis, it
        ratios = np.maximum(xB[pos], 0.0) / u[pos]
        tmin = ratios.min()
        ties = pos[ratios <= tmin + tol.lp_feasibility]
        if bland:
            r = int(ties[np.argmin(basis[ties])])
        else:
            r = int(ties[np.argmax(u[ties])])
        if tmin <= tol.lp_feasibility:
            degenerate += 1
            if degenerate > tol.stall_pivots:
                bland = True
        else:
            degenerate = 0
        basis[r] = j
    return "stalled", basis, max_iter


def _simplex(lp: LinearProgram, tol: Tolerances, basis0=None, max_iter=None) -> LpSolution:
    st = _Standard(lp)
    A, b, c = st.A.copy(), st.b.copy(), st.c
    m, ns = A.shape
    if max_iter is None:
        max_iter = 50 * (m + ns) + 100
    sign = np.where(b < 0, -1.0, 1.0)
    A *= sign[:, None]
    b *= sign
    total_iter = 0
    if m == 0:
        # no rows: every standard-form variable sits at zero unless it improves the objective
        if np.any(c < -tol.lp_optimality):
            return LpSolution("unbounded", method="simplex")
        x = st.recover_x(np.zeros(ns))
        return LpSolution("optimal", x=x, value=float(lp.c @ x), duals_eq=np.zeros(0),
                          duals_ineq=np.zeros(0), reduced_costs=lp.c.copy(), method="simplex",
                          basis=np.zeros(0, dtype=int))

    basis = None
    if basis0 is not None and len(basis0) == m:
        try:
            B = A[:, basis0]
            xb = np.linalg.solve(B, b)
            if np.all(xb >= -tol.lp_feasibility):
                basis = np.array(basis0, dtype=int)
        except np.linalg.LinAlgError:
            basis = None

    keep_rows = np.arange(m)
    if basis is None:
        # initial basis: unit columns where available, artificials elsewhere
        basis = -np.ones(m, dtype=int)
        for j in range(ns):
            col = A[:, j]
            nz = np.flatnonzero(col)
            if nz.size == 1 and col[nz[0]] == 1.0 and basis[nz[0]] < 0:
                basis[nz[0]] = j
        art_rows = np.flatnonzero(basis < 0)
        if art_rows.size:
            na = art_rows.size
            A1 = np.hstack([A, np.zeros((m, na))])
            A1[art_rows, ns + np.arange(na)] = 1.0
            c1 = np.concatenate([np.zeros(ns), np.ones(na)])
            basis[art_rows] = ns + np.arange(na)
            status, basis, it = _primal_simplex(A1, b, c1, basis, tol, max_iter)
            total_iter += it
            if status != "optimal":
                return LpSolution("stalled", iterations=total_iter, method="simplex")
            xB = np.linalg.solve(A1[:, basis], b)
            infeas = float(xB[basis >= ns].sum())
            if infeas > tol.lp_feasibility * max(1.0, np.abs(b).max()) * 10:
                return LpSolution("infeasible", iterations=total_iter, method="simplex")
            # drive artificials out of the basis or drop redundant rows
            drop = []
            for pos in range(m):
                if basis[pos] < ns:
                    continue
                Binv_row = np.linalg.solve(A1[:, basis].T, np.eye(m)[pos])
                row = Binv_row @ A
                row[basis[basis < ns]] = 0.0
                cands = np.flatnonzero(np.abs(row) > 1e-9)
                if cands.size:
                    basis[pos] = int(cands[np.argmax(np.abs(row[cands]))])
                else:
                    drop.append(pos)
            if drop:
                # the row index of a dropped basis position is the artificial's row
                drop_rows = [art_rows[basis[p] - ns] for p in drop]
                keep_pos = np.setdiff1d(np.arange(m), drop)
                keep_rows = np.setdiff1d(np.arange(m), drop_rows)
                basis = basis[keep_pos]
                A, b = A[keep_rows], b[keep_rows]
                m = A.shape[0]

    status, basis, it = _primal_simplex(A, b, c, basis, tol, max_iter)
    total_iter += it
    if status != "optimal":
        return LpSolution(status, iterations=total_iter, method="simplex")
    lu = lu_factor(A[:, basis])
    xB = lu_solve(lu, b)
    y = lu_solve(lu, c[basis], trans=1)
    s = np.zeros(ns)
    s[basis] = np.maximum(xB, 0.0)
    x = st.recover_x(s)
    y_full = np.zeros(st.A.shape[0])
    y_full[keep_rows] = y
    y_full *= sign
    y_eq = y_full[:st.m_e]
    y_in = np.maximum(y_full[st.m_e:st.m_e + st.m_g], 0.0)
    E, G = lp.dense()
    rc = lp.c - E.T @ y_eq - G.T @ y_in
    return LpSolution("optimal", x=x, value=float(lp.c @ x), duals_eq=y_eq, duals_ineq=y_in,
                      reduced_costs=rc, iterations=total_iter, method="simplex", basis=basis)


# --------------------------------------------------------------------------
# HiGHS
# --------------------------------------------------------------------------


def _highs(lp: LinearProgram, tol: Tolerances) -> LpSolution:
    bounds = np.column_stack([lp.lb, lp.ub])
    kw = {}
    if lp.m_eq:
        kw["A_eq"], kw["b_eq"] = lp.A_eq, lp.b_eq
    if lp.m_ineq:
        kw["A_ub"], kw["b_ub"] = -lp.G, -lp.g
    res = linprog(lp.c, bounds=bounds, method="highs",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10}, **kw)
    if res.status == 2:
        return LpSolution("infeasible", method="highs")
    if res.status == 3:
        return LpSolution("unbounded", method="highs")
    if res.status != 0:
        return LpSolution("stalled", method="highs", iterations=int(getattr(res, "nit", 0)))
    y_eq = np.asarray(res.eqlin.marginals) if lp.m_eq else np.zeros(0)
    y_in = -np.asarray(res.ineqlin.marginals) if lp.m_ineq else np.zeros(0)
    rc = np.asarray(res.lower.marginals) + np.asarray(res.upper.marginals)
    return LpSolution("optimal", x=np.asarray(res.x), value=float(res.fun), duals_eq=y_eq,
                      duals_ineq=y_in, reduced_costs=rc, iterations=int(res.nit), method="highs")


def solve_lp(lp: LinearProgram, method: str = "auto", *, basis=None,
             tol: Tolerances = DEFAULT_TOLERANCES, max_iter: Optional[int] = None) -> LpSolution:
    """Solve a linear program.

    Parameters
    ----------
    lp : LinearProgram
    method : {"auto", "simplex", "highs"}
        ``"auto"`` uses the dense simplex for small dense problems and HiGHS
        otherwise.
    basis : array_like, optional
        Warm-start basis (standard-form column indices) from a previous
        :class:`LpSolution` of a problem with the same shape. Ignored if it is
        not primal feasible.
    """
    if method == "auto":
        size = lp.n * (lp.m_eq + lp.m_ineq + 1)
        method = "simplex" if (not lp.is_sparse and size <= _DENSE_LIMIT) else "highs"
    if method == "simplex":
        return _simplex(lp, tol, basis0=basis, max_iter=max_iter)
    if method == "highs":
        return _highs(lp, tol)
    raise ValueError(f"unknown LP method {method!r}")


def kkt_residual(lp: LinearProgram, sol: LpSolution) -> float:
    """Largest violation of primal/dual feasibility, complementarity and duality gap."""
    E, G = lp.dense()
    x, ye, yi = sol.x, sol.duals_eq, sol.duals_ineq
    res = [0.0]
    if lp.m_eq:
        res.append(np.abs(E @ x - lp.b_eq).max())
    if lp.m_ineq:
        slack = G @ x - lp.g
        res.append(max(0.0, -slack.min()))
        res.append(max(0.0, -yi.min()))
        res.append(np.abs(yi * slack).max())
    rc = lp.c - E.T @ ye - G.T @ yi
    lo_act = np.isfinite(lp.lb) & (x - lp.lb <= 1e-7)
    up_act = np.isfinite(lp.ub) & (lp.ub - x <= 1e-7)
    free = ~(lo_act | up_act)
    if free.any():
        res.append(np.abs(rc[free]).max())
    only_lo = lo_act & ~up_act
    if only_lo.any():
        res.append(max(0.0, -rc[only_lo].min()))
    only_up = up_act & ~lo_act
    if only_up.any():
        res.append(max(0.0, rc[only_up].max()))
    res.append(max(0.0, -np.min(x - lp.lb)))
    res.append(max(0.0, np.max(x - lp.ub)))
    # duality gap
    dual = lp.b_eq @ ye + lp.g @ yi
    rlo = np.where(np.isfinite(lp.lb), lp.lb, 0.0)
    rup = np.where(np.isfinite(lp.ub), lp.ub, 0.0)
    dual += np.sum(np.where(rc > 0, rc * rlo, rc * rup))
    res.append(abs(dual - lp.c @ x) / (1.0 + abs(lp.c @ x)))
    return float(max(res))


__all__ = ["LinearProgram", "LpSolution", "solve_lp", "kkt_residual"]

