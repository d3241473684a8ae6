"""Scenario-decomposed dual bundle methods for the two scalarizations.

Both methods relax nonanticipativity of the first stage with multipliers
``lambda`` (``E[lambda] = 0``) and maximize the resulting concave dual function
over ``(mu, lambda)`` (weighted sum) or ``(m, lambda)`` (entry height), where
``mu`` is a vector of probability measures and ``m`` a vector of finite
measures. The dual function splits into one linear program per scenario plus
a penalty term; the master problem is a proximally regularized QP over cutting
plane models of these pieces.

Layout conventions
------------------
Scenario-indexed dual vectors are stored scenario-major: ``mu_i^j`` sits at
position ``i * J + j``, ``lambda_i`` at ``I * J + i * M``. Risk-module
functions take ``(J, I)`` arrays; :func:`_as_ji` converts.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .model import TwoStageProblem, all_scenario_vertices, build_scenario_lp, extensive_constraints
from .opt_kernel import LinearProgram, RegularizedQP, solve_lp, solve_qp
from .risk import CVaR, Entropic, RiskMeasure

logger = logging.getLogger(__name__)

_CLAMP = 1e-12


class BundleError(RuntimeError):
    """Raised when a bundle run cannot produce a usable result."""


@dataclass
class BundleParams:
    """Tuning parameters of the dual bundle methods.

    Attributes
    ----------
    rho : float, optional
        Proximal weight of the master objective. ``None`` selects
        ``(mean scenario probability)**2``: multipliers enter the subproblems
        scaled by ``p_i``, so an unscaled weight makes steps vanish as ``I`` grows.
    descent : float
        Fraction in ``(0, 1)`` of the predicted increase required for a descent step.
    eps : float
        Stopping tolerance on ``model value - center value``.
    max_iters : int
        Iteration budget for the main loop.
    single_cut : bool
        Aggregate the scenario cuts into one cut per iteration.
    cut_deletion : bool
        Drop cuts whose master multipliers vanish.
    deletion_tol : float
        Multipliers at or below this value count as zero.
    recovery_extra : int
        Extra iterations allowed after stopping to reach the next descent step.
    trace : str or callable, optional
        File path receiving one JSON line per iteration, or a callback taking the record.
    """

    rho: Optional[float] = None
    descent: float = 0.1
    eps: float = 1e-6
    max_iters: int = 500
    single_cut: bool = False
    cut_deletion: bool = True
    deletion_tol: float = 1e-8
    recovery_extra: int = 50
    trace: Optional[object] = None

    def __post_init__(self):
        if self.rho is not None and self.rho <= 0:
            raise ValueError("rho must be positive")
        if not 0 < self.descent < 1:
            raise ValueError("descent parameter must lie in (0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass
class Cut:
    """Subproblem solutions and subgradient data from one iteration.

    ``costs`` has shape ``(J, I)``; ``x`` and ``y`` are ``(I, M)`` and ``(I, N)``.
    ``beta`` holds ``(rho, constant)`` of the penalty cut ``rho @ d - eta >= constant``
    (entropic only). ``active`` marks which scenario rows are still in the master.
    """

    index: int
    values: np.ndarray
    x: np.ndarray
    y: np.ndarray
    costs: np.ndarray
    beta: Optional[tuple] = None
    active: Optional[np.ndarray] = None
    beta_active: bool = True


@dataclass
class BundleResult:
    """Outcome of a bundle run.

    Attributes
    ----------
    value : float
        Dual value at the final center (a lower bound on the scalarized optimum).
    primal_value : float
        ``w @ z`` (weighted sum) or ``alpha`` (entry height) at the recovered primal point.
    x : ndarray
        De-randomized first stage.
    y : ndarray
        Recourse decisions ``(I, N)`` consistent with ``x``.
    x_scenarios, y_scenarios : ndarray
        Recovered randomized solution before de-randomization.
    z : ndarray
        Attaining point (weighted sum) or ``v + alpha * 1`` (entry height).
    alpha : float or None
    gamma : ndarray or None
        Recovered dual weight (entry height only).
    dual_point : dict
        Final centers ``{"mu" or "m": (J, I), "lambda": (I, M)}``.
    converged : bool
    iterations : int
    gap : float
        Model value minus center value at the stopping iteration.
    residual : float
        ``max_i ||x_i - E[x]||_inf`` of the recovered randomized first stage.
    recovery : str
        ``"descent"`` when the multipliers come from the master preceding a descent
        step, ``"last"`` when the extra budget ran out.
    trace : list
    """

    value: float
    primal_value: float
    x: np.ndarray
    y: np.ndarray
    x_scenarios: np.ndarray
    y_scenarios: np.ndarray
    z: np.ndarray
    converged: bool
    iterations: int
    gap: float
    residual: float
    recovery: str
    alpha: Optional[float] = None
    gamma: Optional[np.ndarray] = None
    dual_point: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return not self.converged or self.recovery != "descent"


# --------------------------------------------------------------------------
# scenario subproblems
# --------------------------------------------------------------------------


class ScenarioSubproblems:
    """Solver for ``min_{(x_i, y_i) in F_i} a_i @ (C x_i + Q_i y_i) + p_i lambda_i @ x_i``.

    Uses enumerated vertices of every ``F_i`` when affordable (an exact argmin over
    a finite set) and falls back to one LP per scenario otherwise.
    """

    def __init__(self, problem: TwoStageProblem, use_vertices: bool = True):
        self.problem = problem
        self.vertices = all_scenario_vertices(problem) if use_vertices else None
        P = problem
        self._D = [np.hstack([P.C, s.Q]) for s in P.scenarios]
        self._stack = None
        if self.vertices is not None:
            if any(V.shape[0] == 0 for V in self.vertices):
                raise BundleError("a scenario polytope is empty")
            self._U = [V @ D.T for V, D in zip(self.vertices, self._D)]
            sizes = {V.shape[0] for V in self.vertices}
            if len(sizes) == 1:
                self._stack = (np.stack(self._U), np.stack([V[:, :P.M] for V in self.vertices]),
                               np.stack([V[:, P.M:] for V in self.vertices]))

    @property
    def method(self) -> str:
        return "vertices" if self.vertices is not None else "lp"

    def solve(self, a: np.ndarray, lam: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Solve all scenarios.

        Parameters
        ----------
        a : ndarray, shape (J, I)
            Cost weights per scenario (``w * mu`` or ``m``).
        lam : ndarray, shape (I, M)

        Returns
        -------
        values : (I,), x : (I, M), y : (I, N), costs : (J, I)
        """
        P = self.problem
        p = P.p
        if self._stack is not None:
            U, X, Y = self._stack
            obj = np.einsum("inj,ji->in", U, a) + p[:, None] * np.einsum("inm,im->in", X, lam)
            k = np.argmin(obj, axis=1)
            r = np.arange(P.I)
            return obj[r, k], X[r, k], Y[r, k], U[r, k].T
        vals = np.empty(P.I)
        xs = np.empty((P.I, P.M))
        ys = np.empty((P.I, P.N))
        costs = np.empty((P.J, P.I))
        for i in range(P.I):
            vals[i], xs[i], ys[i], costs[:, i] = self.solve_one(i, a[:, i], lam[i])
        return vals, xs, ys, costs

    def solve_one(self, i: int, a_i: np.ndarray, lam_i: np.ndarray):
        P = self.problem
        D = self._D[i]
        if self.vertices is not None:
            V = self.vertices[i]
            obj = self._U[i] @ a_i + P.p[i] * (V[:, :P.M] @ lam_i)
            k = int(np.argmin(obj))
            return obj[k], V[k, :P.M], V[k, P.M:], self._U[i][k]
        c = D.T @ a_i
        c[:P.M] += P.p[i] * lam_i
        sol = solve_lp(build_scenario_lp(P, i, c))
        if not sol.optimal:
            raise BundleError(f"scenario {i} subproblem ended with status {sol.status}")
        v = np.maximum(sol.x, 0.0)
        return sol.value, v[:P.M], v[P.M:], D @ v


def solve_scenario_subproblem(problem: TwoStageProblem, i: int, weights, lam, w=None) -> dict:
    """Solve one scenario subproblem and return its value, solution and subgradients.

    With ``w`` given, ``weights`` is the probability vector ``mu_i`` and the cost
    weights are ``w * mu_i``; otherwise ``weights`` is the finite measure ``m_i``.
    """
    weights = np.asarray(weights, float)
    a = weights * np.asarray(w, float) if w is not None else weights
    sub = ScenarioSubproblems(problem, use_vertices=False)
    val, x, y, u = sub.solve_one(i, a, np.asarray(lam, float))
    out = {"value": float(val), "x": x, "y": y, "g_lambda": problem.p[i] * x}
    if w is not None:
        out["g_mu"] = np.asarray(w, float) * u
    else:
        out["g_m"] = u
    return out


# --------------------------------------------------------------------------
# master problems
# --------------------------------------------------------------------------


def _as_ji(vec: np.ndarray, I: int, J: int) -> np.ndarray:
    return vec.reshape(I, J).T


class _Master:
    """Builds and solves the regularized master QP over ``[d, lambda, theta, eta]``."""

    def __init__(self, problem: TwoStageProblem, R: RiskMeasure, mode: str, w, v,
                 params: BundleParams):
        P = problem
        self.P, self.R, self.mode, self.params = P, R, mode, params
        self.w = None if w is None else np.asarray(w, float)
        self.v = None if v is None else np.asarray(v, float)
        I, J, M = P.I, P.J, P.M
        self.nd, self.nl = I * J, I * M
        self.nt = 1 if params.single_cut else I
        self.off_l = self.nd
        self.off_t = self.nd + self.nl
        self.off_e = self.off_t + self.nt
        # CVaR entry-height masters carry the masses sum_i m_i^j as auxiliary
        # variables so that the domain rows stay sparse
        self.n_mass = J if (mode == "p2" and isinstance(R, CVaR)) else 0
        self.off_s = self.off_e + 1
        self.n = self.off_s + self.n_mass
        self.coherent = isinstance(R, CVaR)
        self.rho = params.rho if params.rho is not None else float(np.mean(P.p)) ** 2
        self._static()

    def _static(self):
        P, R, I, J, M = self.P, self.R, self.P.I, self.P.J, self.P.M
        n, p = self.n, P.p
        rows, cols, vals = [], [], []
        e = []
        r = 0
        # E[lambda] = 0
        for m in range(M):
            for i in range(I):
                rows.append(r); cols.append(self.off_l + i * M + m); vals.append(p[i])
            e.append(0.0); r += 1
        if self.mode == "p1":
            for j in range(J):
                for i in range(I):
                    rows.append(r); cols.append(i * J + j); vals.append(1.0)
                e.append(1.0); r += 1
        else:
            for k in range(I * J):
                rows.append(r); cols.append(k); vals.append(1.0)
            e.append(1.0); r += 1
        if self.coherent:
            rows.append(r); cols.append(self.off_e); vals.append(1.0)
            e.append(0.0); r += 1
        for j in range(self.n_mass):
            # s^j - sum_i m_i^j = 0
            rows.append(r); cols.append(self.off_s + j); vals.append(1.0)
            for i in range(I):
                rows.append(r); cols.append(i * J + j); vals.append(-1.0)
            e.append(0.0); r += 1
        self.E = sp.csr_matrix((vals, (rows, cols)), shape=(r, n))
        self.e = np.array(e)
        # penalty-domain rows for CVaR
        G_rows, g = [], []
        if self.coherent:
            bound = 1.0 / (1.0 - R.nu)
            if self.mode == "p1":
                data = -np.ones(I * J)
                G_rows.append(sp.csr_matrix((data, (np.arange(I * J), np.arange(I * J))), shape=(I * J, n)))
                g.append(-np.array([p[i] * bound[j] for i in range(I) for j in range(J)]))
            else:
                # m_i^j <= p_i / (1 - nu^j) * s^j
                rr, cc, vv = [], [], []
                for i in range(I):
                    for j in range(J):
                        row = i * J + j
                        rr += [row, row]
                        cc += [row, self.off_s + j]
                        vv += [-1.0, p[i] * bound[j]]
                G_rows.append(sp.csr_matrix((vv, (rr, cc)), shape=(I * J, n)))
                g.append(np.zeros(I * J))
                if not R.is_orthant:
                    rays = R.cone_rays
                    rr, cc, vv = [], [], []
                    for k, ray in enumerate(rays):
                        for j in range(J):
                            rr.append(k); cc.append(self.off_s + j); vv.append(ray[j])
                    G_rows.append(sp.csr_matrix((vv, (rr, cc)), shape=(len(rays), n)))
                    g.append(np.zeros(len(rays)))
        self.G_dom = sp.vstack(G_rows, format="csr") if G_rows else sp.csr_matrix((0, n))
        self.g_dom = np.concatenate(g) if g else np.zeros(0)
        c = np.zeros(n)
        c[self.off_t:self.off_e] = 1.0
        c[self.off_e] = 1.0
        if self.mode == "p2":
            c[:self.nd] = -np.tile(self.v, I)
        self.c = c

    def cut_rows(self, cuts: list) -> tuple[sp.csr_matrix, np.ndarray, list]:
        """Rows ``G u >= g`` of the active cuts and a key per row."""
        P, I, J, M = self.P, self.P.I, self.P.J, self.P.M
        p = P.p
        rr, cc, vv, g, keys = [], [], [], [], []
        r = 0
        for cut in cuts:
            gd = cut.costs.T * (self.w[None, :] if self.mode == "p1" else 1.0)  # (I, J)
            gl = p[:, None] * cut.x  # (I, M)
            if self.params.single_cut:
                if cut.active[0]:
                    for i in range(I):
                        rr += [r] * (J + M)
                        cc += list(range(i * J, i * J + J)) + list(range(self.off_l + i * M, self.off_l + i * M + M))
                        vv += list(gd[i]) + list(gl[i])
                    rr.append(r); cc.append(self.off_t); vv.append(-1.0)
                    g.append(0.0); keys.append(("f", cut.index, -1)); r += 1
            else:
                for i in np.flatnonzero(cut.active):
                    rr += [r] * (J + M + 1)
                    cc += list(range(i * J, i * J + J)) + list(range(self.off_l + i * M, self.off_l + i * M + M))
                    cc.append(self.off_t + i)
                    vv += list(gd[i]) + list(gl[i]) + [-1.0]
                    g.append(0.0); keys.append(("f", cut.index, int(i))); r += 1
            if cut.beta is not None and cut.beta_active:
                rho, const = cut.beta
                nz = np.flatnonzero(rho)
                rr += [r] * (nz.size + 1)
                cc += list(nz) + [self.off_e]
                vv += list(rho[nz]) + [-1.0]
                g.append(const); keys.append(("b", cut.index, -1)); r += 1
        G = sp.csr_matrix((vv, (rr, cc)), shape=(r, self.n))
        return G, np.array(g), keys

    def solve(self, cuts: list, center_d: np.ndarray, center_l: np.ndarray):
        G_cut, g_cut, keys = self.cut_rows(cuts)
        G = sp.vstack([G_cut, self.G_dom], format="csr")
        g = np.concatenate([g_cut, self.g_dom])
        prox = np.arange(self.nd + self.nl)
        qp = RegularizedQP(self.c, self.rho, prox, np.concatenate([center_d, center_l]),
                           self.E, self.e, G, g, nonneg=np.arange(self.nd))
        sol = solve_qp(qp)
        if not sol.optimal:
            raise BundleError(f"master problem ended with status {sol.status}")
        return sol, keys, sol.duals_ineq[:len(keys)]


# --------------------------------------------------------------------------
# the method
# --------------------------------------------------------------------------


class _Run:
    """State of one bundle run (shared by both scalarizations)."""

    def __init__(self, problem: TwoStageProblem, R: RiskMeasure, mode: str, w, v,
                 params: BundleParams, subproblems: Optional[ScenarioSubproblems]):
        self.P, self.R, self.mode = problem, R, mode
        self.w = None if w is None else np.asarray(w, float)
        self.v = None if v is None else np.asarray(v, float)
        self.params = params
        self.sub = subproblems if subproblems is not None else ScenarioSubproblems(problem)
        self.master = _Master(problem, R, mode, w, v, params)
        self.cuts: list = []
        self.trace: list = []
        self._sink = self._open_trace(params.trace)

    @staticmethod
    def _open_trace(trace) -> Optional[Callable]:
        if trace is None:
            return None
        if callable(trace):
            return trace
        fh = open(trace, "a", encoding="utf-8")

        def sink(rec):
            fh.write(json.dumps(rec) + "\n")
            fh.flush()
        return sink

    # -- oracle ------------------------------------------------------------

    def _clean(self, d: np.ndarray) -> np.ndarray:
        """Project a master iterate onto the exact dual domain (removes solver noise)."""
        P = self.P
        D = np.maximum(_as_ji(d, P.I, P.J), 0.0)
        if self.mode == "p1":
            D = D / D.sum(axis=1, keepdims=True)
        else:
            D = D / D.sum()
        return D.T.ravel()

    def evaluate(self, d: np.ndarray, lam: np.ndarray, index: int) -> tuple[float, Cut]:
        P, R = self.P, self.R
        I, J, M = P.I, P.J, P.M
        D = _as_ji(d, I, J)
        a = D * self.w[:, None] if self.mode == "p1" else D
        vals, xs, ys, costs = self.sub.solve(a, lam.reshape(I, M))
        F = float(vals.sum())
        beta = None
        if isinstance(R, Entropic):
            Dc = np.maximum(D, _CLAMP)
            if self.mode == "p1":
                Dc = Dc / Dc.sum(axis=1, keepdims=True)
                pen = R.penalty_beta(Dc, self.w, P.p)
                rho = R.beta_subgradient(Dc, self.w, P.p)
            else:
                pen = R.penalty_beta_tilde(Dc, P.p)
                rho = R.beta_tilde_subgradient(Dc, P.p)
            F -= pen
            rho_vec = rho.T.ravel()
            beta = (rho_vec, float(pen + rho_vec @ Dc.T.ravel()))
        if self.mode == "p2":
            F -= float(D.sum(axis=1) @ self.v)
        n_rows = 1 if self.params.single_cut else I
        cut = Cut(index, vals, xs, ys, costs, beta, np.ones(n_rows, bool))
        return F, cut

    def model_value(self, sol) -> float:
        m = self.master
        return float(m.c @ sol.u)

    # -- recovery ----------------------------------------------------------

    def recover(self, keys, duals, sol) -> dict:
        P = self.P
        I, M, N = P.I, P.M, P.N
        by_index = {c.index: c for c in self.cuts}
        X = np.zeros((I, M))
        Y = np.zeros((I, N))
        tau_sum = np.zeros(I)
        theta_sum = 0.0
        for (kind, l, i), t in zip(keys, duals):
            t = max(float(t), 0.0)
            if kind == "b":
                theta_sum += t
                continue
            cut = by_index[l]
            if i < 0:
                X += t * cut.x
                Y += t * cut.y
                tau_sum += t
            else:
                X[i] += t * cut.x[i]
                Y[i] += t * cut.y[i]
                tau_sum[i] += t
        bad = np.abs(tau_sum - 1.0).max()
        if isinstance(self.R, Entropic):
            bad = max(bad, abs(theta_sum - 1.0))
        if bad > 1e-6:
            raise BundleError(f"master duals unusable (multiplier sums off by {bad:.2e})")
        X /= tau_sum[:, None]
        Y /= tau_sum[:, None]
        Ex = P.p @ X
        residual = float(np.abs(X - Ex[None, :]).max()) if M else 0.0
        return {"X": X, "Y": Y, "Ex": Ex, "residual": residual, "d_next": sol.u[:self.master.nd]}

    # -- main loop ---------------------------------------------------------

    def run(self):
        P, prm = self.P, self.params
        I, J, M = P.I, P.J, P.M
        if self.mode == "p1":
            d = np.tile(P.p, (J, 1)).T.ravel()  # mu_i^j = p_i
        else:
            d = np.tile(P.p / J, (J, 1)).T.ravel()  # m_i^j = p_i / J
        lam = np.zeros(I * M)
        model = np.inf
        center = (d.copy(), lam.copy())
        F_bar = 0.0
        stopped = False
        extra = 0
        last = None  # (sol, keys, duals) of the master that produced the current iterate
        gap = np.inf
        recovery = "last"
        k = 0
        while True:
            k += 1
            F, cut = self.evaluate(d, lam, k)
            if F < model or k == 1:
                self.cuts.append(cut)
            descent = k == 1 or F >= (1 - prm.descent) * F_bar + prm.descent * model
            if descent:
                center = (d.copy(), lam.copy())
                F_center = F
            else:
                F_center = F_bar
            if stopped and descent and k > 1:
                recovery = "descent"
                F_bar = F_center
                break
            sol, keys, duals = self.master.solve(self.cuts, *center)
            if prm.cut_deletion:
                self._delete(keys, duals)
            last = (sol, keys, duals)
            model = self.model_value(sol)
            F_bar = F_center
            gap = model - F_bar
            rec = {"k": k, "F": F, "model": model, "center": F_bar, "gap": gap,
                   "descent": bool(descent), "cuts": int(sum(c.active.sum() for c in self.cuts))}
            self.trace.append(rec)
            if self._sink is not None:
                self._sink(rec)
            u = sol.u
            d = self._clean(u[:self.master.nd])
            lam = u[self.master.off_l:self.master.off_t].copy()
            # keep E[lambda] = 0 exactly
            L = lam.reshape(I, M)
            L -= (P.p @ L)[None, :]
            lam = L.ravel()
            if stopped:
                extra += 1
                if extra >= prm.recovery_extra:
                    break
            elif gap <= prm.eps:
                stopped = True
                stop_gap = gap
            elif k >= prm.max_iters:
                break
        converged = stopped
        final_gap = stop_gap if stopped else gap
        sol, keys, duals = last
        info = self.recover(keys, duals, sol)
        info.update(value=F_bar, converged=converged, iterations=k, gap=final_gap,
                    recovery=recovery, center=center)
        return info

    def _delete(self, keys, duals):
        by_index = {c.index: c for c in self.cuts}
        for (kind, l, i), t in zip(keys, duals):
            if t > self.params.deletion_tol:
                continue
            cut = by_index[l]
            if kind == "b":
                cut.beta_active = False
            else:
                cut.active[max(i, 0)] = False
        self.cuts = [c for c in self.cuts if c.active.any() or (c.beta is not None and c.beta_active)]


# --------------------------------------------------------------------------
# de-randomization
# --------------------------------------------------------------------------


def derandomize(problem: TwoStageProblem, Ex: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Turn a recovered randomized solution into a feasible deterministic one.

    The averaged first stage is projected onto ``{A x = b, x >= 0}`` in the
    l1 norm; each recourse decision is then projected onto its scenario
    polytope given that ``x``. If some scenario has no recourse for the
    projected ``x``, one l1 projection over the whole extensive form is used.
    """
    P = problem
    M, N, I = P.M, P.N, P.I
    x = _l1_project(np.asarray(P.A, float), P.b, Ex, np.ones(M))
    ys = np.empty((I, N))
    ok = x is not None
    if ok:
        for i, s in enumerate(P.scenarios):
            rhs = s.h - s.T @ x
            if np.all(Y[i] >= 0) and np.abs(s.W @ Y[i] - rhs).max(initial=0.0) <= 1e-12:
                ys[i] = Y[i]
                continue
            yi = _l1_project(s.W, rhs, Y[i], np.ones(N))
            if yi is None:
                ok = False
                break
            ys[i] = yi
    if ok:
        return x, ys
    E, e = extensive_constraints(P)
    target = np.concatenate([Ex, Y.ravel()])
    weights = np.concatenate([np.ones(M), np.repeat(P.p, N)])
    v = _l1_project(E, e, target, weights)
    if v is None:
        raise BundleError("no feasible solution near the recovered point")
    return v[:M], v[M:].reshape(I, N)


def _l1_project(E, e, target, weights) -> Optional[np.ndarray]:
    """``argmin sum weights * |v - target|`` over ``E v = e, v >= 0``."""
    n = target.size
    if n == 0:
        return np.zeros(0)
    E = sp.csr_matrix(E)
    m = E.shape[0]
    if m == 0:
        return np.maximum(target, 0.0)
    # variables (v, t): t >= v - target, t >= target - v
    I_n = sp.identity(n, format="csr")
    G = sp.vstack([sp.hstack([-I_n, I_n]), sp.hstack([I_n, I_n])], format="csr")
    g = np.concatenate([-target, target])
    A = sp.hstack([E, sp.csr_matrix((m, n))], format="csr")
    c = np.concatenate([np.zeros(n), weights])
    lb = np.zeros(2 * n)
    sol = solve_lp(LinearProgram(c, A, np.asarray(e, float), G, g, lb), method="highs")
    if not sol.optimal:
        return None
    return np.maximum(sol.x[:n], 0.0)


# --------------------------------------------------------------------------
# public entry points
# --------------------------------------------------------------------------


def _log_flags(result: BundleResult, name: str) -> None:
    if not result.converged:
        logger.warning("bundle %s run did not converge (gap %.2e)", name, result.gap)
    elif result.recovery != "descent":
        logger.info("bundle %s recovery used the last master (no descent step)", name)


def _check_backend(R: RiskMeasure):
    if not isinstance(R, (CVaR, Entropic)):
        raise TypeError(f"unsupported risk measure {type(R).__name__}")


def run_bundle_p1(problem: TwoStageProblem, R: RiskMeasure, w, params: Optional[BundleParams] = None,
                  subproblems: Optional[ScenarioSubproblems] = None) -> BundleResult:
    """Weighted-sum scalarization by the dual bundle method, with primal recovery."""
    _check_backend(R)
    params = params or BundleParams()
    w = np.asarray(w, float).ravel()
    if w.size != problem.J or np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be nonnegative, nonzero and have J entries")
    if isinstance(R, CVaR) and not R.in_dual_cone(w):
        raise BundleError("weight outside the dual cone: the scalarization is unbounded")
    run = _Run(problem, R, "p1", w, None, params, subproblems)
    info = run.run()
    x, y = derandomize(problem, info["Ex"], info["Y"])
    u = problem.costs(x, y)
    _, z = R.scalarize(w, u, problem.p)
    I, J = problem.I, problem.J
    result = BundleResult(
        value=info["value"], primal_value=float(w @ z), x=x, y=y, x_scenarios=info["X"],
        y_scenarios=info["Y"], z=z, converged=info["converged"], iterations=info["iterations"],
        gap=info["gap"], residual=info["residual"], recovery=info["recovery"],
        dual_point={"mu": _as_ji(info["center"][0], I, J),
                    "lambda": info["center"][1].reshape(I, problem.M)},
        trace=run.trace)
    _log_flags(result, "P1")
    return result


def run_bundle_p2(problem: TwoStageProblem, R: RiskMeasure, v, params: Optional[BundleParams] = None,
                  subproblems: Optional[ScenarioSubproblems] = None) -> BundleResult:
    """Entry-height scalarization by the dual bundle method, with primal and weight recovery."""
    _check_backend(R)
    params = params or BundleParams()
    v = np.asarray(v, float).ravel()
    if v.size != problem.J:
        raise ValueError("reference point must have J entries")
    run = _Run(problem, R, "p2", None, v, params, subproblems)
    info = run.run()
    x, y = derandomize(problem, info["Ex"], info["Y"])
    u = problem.costs(x, y)
    alpha = R.entry_alpha(u, problem.p, v)
    I, J = problem.I, problem.J
    # the final center carries a certified dual value; after a descent step it is
    # the iterate produced by the recovery master
    gamma = np.maximum(_as_ji(info["center"][0], I, J).sum(axis=1), 0.0)
    if gamma.sum() <= 0:
        raise BundleError("recovered weight vanished")
    gamma = gamma / gamma.sum()
    result = BundleResult(
        value=info["value"], primal_value=alpha, x=x, y=y, x_scenarios=info["X"],
        y_scenarios=info["Y"], z=v + alpha, alpha=alpha, gamma=gamma,
        converged=info["converged"], iterations=info["iterations"], gap=info["gap"],
        residual=info["residual"], recovery=info["recovery"],
        dual_point={"m": _as_ji(info["center"][0], I, J),
                    "lambda": info["center"][1].reshape(I, problem.M)},
        trace=run.trace)
    _log_flags(result, "P2")
    return result


__all__ = ["BundleParams", "BundleResult", "BundleError", "Cut", "ScenarioSubproblems",
           "solve_scenario_subproblem", "run_bundle_p1", "run_bundle_p2", "derandomize"]
