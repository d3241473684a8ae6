"""Primal and dual Benson-type approximation algorithms for the upper image.

The upper image ``P`` collects every cost vector ``z in R(C x + Q y)`` over
feasible ``(x, y)``. The primal algorithm refines an outer polyhedral
approximation of ``P`` with supporting halfspaces obtained from the
entry-height scalarization; the dual algorithm refines an outer approximation
of the lower image ``D = {(w^1..w^{J-1}, p) : p <= P1(w)}`` with halfspaces
obtained from the weighted-sum scalarization. Both return point and weight
sets from which inner and outer approximations of ``P`` and ``D`` are built.

Outer approximations are assembled from certified lower bounds of the
scalarized problems, inner approximations from attained points. The two
therefore differ by at most ``epsilon`` plus the recorded solver gaps.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bundle import BundleError, BundleParams, ScenarioSubproblems, run_bundle_p1, run_bundle_p2
from .model import TwoStageProblem
from .polyhedra import Cone, Polyhedron, simplex_box_halfspaces
from .risk import CVaR, RiskMeasure
from .scalarization import ScalarizationError, solve_p1_direct, solve_p2_direct

logger = logging.getLogger(__name__)

BACKENDS = ("direct", "bundle", "auto")
AUTO_BUNDLE_MIN_SCENARIOS = 101


# --------------------------------------------------------------------------
# scalar solves with backend selection and fallback
# --------------------------------------------------------------------------


@dataclass
class P1Record:
    """Weighted-sum solve: attained ``z`` (in ``P``) and a lower bound on ``P1(w)``."""

    w: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    value: float
    bound: float
    backend: str
    flagged: bool = False


@dataclass
class P2Record:
    """Entry-height solve with its dual weight.

    ``gamma_bound`` is a lower bound on ``P1(gamma)``.
    """

    v: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    alpha: float
    bound: float
    gamma: np.ndarray
    gamma_bound: float
    backend: str
    flagged: bool = False


class ScalarSolver:
    """Dispatches scalarized problems to the direct or bundle backend.

    A failed or non-converged solve is retried with the other backend. The
    ``auto`` backend uses bundle methods for more than 100 scenarios.
    """

    def __init__(self, problem: TwoStageProblem, R: RiskMeasure, backend: str = "auto",
                 bundle_params: Optional[BundleParams] = None, fallback: bool = True):
        if backend not in BACKENDS:
            raise ValueError(f"unknown backend {backend!r}")
        self.problem, self.R = problem, R
        if backend == "auto":
            backend = "bundle" if problem.I >= AUTO_BUNDLE_MIN_SCENARIOS else "direct"
        self.backend = backend
        self.bundle_params = bundle_params or BundleParams()
        self.fallback = fallback
        self.n_solves = 0
        self.n_fallbacks = 0
        self.max_gap = 0.0
        self._sub: Optional[ScenarioSubproblems] = None

    def _order(self) -> list[str]:
        other = "direct" if self.backend == "bundle" else "bundle"
        return [self.backend, other] if self.fallback else [self.backend]

    @property
    def subproblems(self) -> ScenarioSubproblems:
        if self._sub is None:
            self._sub = ScenarioSubproblems(self.problem)
        return self._sub

    def p1(self, w) -> P1Record:
        w = np.asarray(w, float)
        last_err = None
        rec = None
        for b in self._order():
            self.n_solves += 1
            try:
                if b == "direct":
                    r = solve_p1_direct(self.problem, self.R, w)
                    rec = P1Record(w, r.x, r.y, r.z, r.value, min(r.bound, r.value), b,
                                   bool(r.diagnostics.get("flagged", False)))
                else:
                    r = run_bundle_p1(self.problem, self.R, w, self.bundle_params, self.subproblems)
                    rec = P1Record(w, r.x, r.y, r.z, r.primal_value, min(r.value, r.primal_value), b,
                                   not r.converged)
            except (ScalarizationError, BundleError) as err:
                last_err = err
                logger.warning("P1 solve with %s backend failed: %s", b, err)
                self.n_fallbacks += 1
                continue
            if not rec.flagged:
                break
            self.n_fallbacks += 1
        if rec is None:
            raise ScalarizationError(f"all backends failed for w={w}: {last_err}")
        self.max_gap = max(self.max_gap, rec.value - rec.bound)
        return rec

    def p2(self, v, probes: Optional[np.ndarray] = None) -> P2Record:
        v = np.asarray(v, float)
        last_err = None
        rec = None
        for b in self._order():
            self.n_solves += 1
            try:
                if b == "direct":
                    r = solve_p2_direct(self.problem, self.R, v)
                    alpha, bound, gamma = r.alpha, min(r.bound, r.alpha), r.gamma
                    flagged = bool(r.diagnostics.get("flagged", False))
                else:
                    r = run_bundle_p2(self.problem, self.R, v, self.bundle_params, self.subproblems)
                    alpha, bound, gamma = r.alpha, min(r.value, r.alpha), r.gamma
                    flagged = not r.converged
            except (ScalarizationError, BundleError) as err:
                last_err = err
                logger.warning("P2 solve with %s backend failed: %s", b, err)
                self.n_fallbacks += 1
                continue
            z = v + alpha
            rec = P2Record(v, r.x, r.y, z, alpha, bound, gamma, float(gamma @ v + bound), b, flagged)
            if probes is not None and len(probes):
                # supporting-halfspace check against known points of the image
                worst = float(np.min(np.asarray(probes) @ gamma - gamma @ z))
                if worst < -1e-6:
                    logger.warning("dual weight from %s backend fails the supporting test (%.2e)",
                                   b, worst)
                    rec.flagged = True
            if not rec.flagged:
                break
            self.n_fallbacks += 1
        if rec is None:
            raise ScalarizationError(f"all backends failed for v={v}: {last_err}")
        self.max_gap = max(self.max_gap, rec.alpha - rec.bound)
        return rec


# --------------------------------------------------------------------------
# solution sets and results
# --------------------------------------------------------------------------


@dataclass
class WeakSolutionSet:
    """Attained points ``(x, y, z)`` of the upper image and weights with ``P1`` lower bounds."""

    entries: list = field(default_factory=list)
    weights: list = field(default_factory=list)

    def add_point(self, x, y, z) -> None:
        z = np.asarray(z, float)
        for e in self.entries:
            if np.allclose(e["z"], z, rtol=0, atol=1e-12):
                return
        self.entries.append({"x": np.asarray(x, float), "y": np.asarray(y, float), "z": z})

    def add_weight(self, w, value: float) -> None:
        w = np.asarray(w, float)
        for rec in self.weights:
            if np.allclose(rec["w"], w, rtol=0, atol=1e-12):
                rec["P1"] = max(rec["P1"], float(value))
                return
        self.weights.append({"w": w, "P1": float(value)})

    @property
    def Z(self) -> np.ndarray:
        return np.array([e["z"] for e in self.entries])

    @property
    def W(self) -> np.ndarray:
        return np.array([r["w"] for r in self.weights])

    @property
    def P1(self) -> np.ndarray:
        return np.array([r["P1"] for r in self.weights])


@dataclass
class VectorSolveResult:
    """Output of :func:`primal_benson` or :func:`dual_benson`."""

    P_in: Polyhedron
    P_out: Polyhedron
    D_in: Polyhedron
    D_out: Polyhedron
    solution_set: WeakSolutionSet
    epsilon: float
    algorithm: str
    recession: np.ndarray
    dual_box: list
    stats: dict = field(default_factory=dict)
    log: list = field(default_factory=list)
    flagged: bool = False


def image_recession_rays(R: RiskMeasure) -> np.ndarray:
    """Generators of a cone contained in the recession cone of the upper image.

    CVaR images are invariant under the ordering cone ``C``; entropic images
    under the nonnegative orthant.
    """
    if isinstance(R, CVaR):
        return np.asarray(R.cone_rays, float)
    return np.eye(R.J)


def initial_weights(R: RiskMeasure) -> np.ndarray:
    """Simplex-normalized weights used to start the primal algorithm."""
    if isinstance(R, CVaR):
        S = np.asarray(R.dual_generators, float)
        return S / S.sum(axis=1, keepdims=True)
    return np.eye(R.J)


def dual_box_halfspaces(R: RiskMeasure) -> list:
    """Halfspaces ``a @ d >= b`` restricting lower-image weights to finite scalarizations."""
    J = R.J
    hs = simplex_box_halfspaces(J)
    if isinstance(R, CVaR) and not R.is_orthant:
        for r in R.cone_rays:
            a = np.zeros(J)
            a[:J - 1] = r[:J - 1] - r[J - 1]
            hs.append((a, -float(r[J - 1])))
    return hs


def _dual_cut(z: np.ndarray) -> tuple[np.ndarray, float]:
    """Halfspace ``(z^J - z^1, ..., z^J - z^{J-1}, 1) @ d <= z^J`` as ``a @ d >= b``."""
    J = z.size
    a = np.append(z[J - 1] - z[:J - 1], 1.0)
    return -a, -float(z[J - 1])


def _complete(t: np.ndarray) -> np.ndarray:
    """Weight ``(t^1, ..., t^{J-1}, 1 - sum)`` of a lower-image point, cleaned to the simplex."""
    w = np.append(t[:-1], 1.0 - t[:-1].sum())
    w[np.abs(w) < 1e-12] = 0.0
    w = np.maximum(w, 0.0)
    return w / w.sum()


def build_approximations(solution_set: WeakSolutionSet, recession: np.ndarray,
                         dual_box: Optional[list] = None) -> dict:
    """Inner and outer approximations of the upper and lower images.

    Returns a dict with ``P_in = conv(Z) + cone(recession)``,
    ``P_out = {z : w @ z >= P1(w)}``, ``D_in = conv{(w', P1(w))} - K`` and
    ``D_out = {d : (z^J - z', 1) @ d <= z^J}`` intersected with ``dual_box``.
    """
    Z = solution_set.Z
    if Z.size == 0:
        raise ValueError("the solution set holds no points")
    J = Z.shape[1]
    P_in = Polyhedron.from_vrep(Z, rays=recession)
    P_out = Polyhedron(solution_set.W, solution_set.P1) if solution_set.weights else \
        Polyhedron(np.zeros((0, J)), np.zeros(0))
    box = dual_box if dual_box is not None else simplex_box_halfspaces(J)
    hs = [_dual_cut(z) for z in Z] + list(box)
    D_out = Polyhedron.from_halfspaces(hs, J)
    if solution_set.weights:
        pts = np.column_stack([solution_set.W[:, :J - 1], solution_set.P1])
        down = np.zeros((1, J))
        down[0, J - 1] = -1.0
        D_in = Polyhedron.from_vrep(pts, rays=down)
    else:
        D_in = Polyhedron(np.array([[1.0] + [0.0] * (J - 1), [-1.0] + [0.0] * (J - 1)]),
                          np.array([1.0, 0.0]))
    return {"P_in": P_in, "P_out": P_out, "D_in": D_in, "D_out": D_out}


def _finish(sol_set, R, epsilon, algorithm, solver, t0, log, iterations, flagged, box) -> VectorSolveResult:
    rec = image_recession_rays(R)
    approx = build_approximations(sol_set, rec, box)
    stats = {
        "scalar_solves": solver.n_solves,
        "fallbacks": solver.n_fallbacks,
        "iterations": iterations,
        "vertices": int(approx["P_out"].vertices.shape[0]),
        "points": len(sol_set.entries),
        "weights": len(sol_set.weights),
        "max_gap": float(max(solver.max_gap, 0.0)),
        "wall_time": time.perf_counter() - t0,
        "backend": solver.backend,
    }
    return VectorSolveResult(approx["P_in"], approx["P_out"], approx["D_in"], approx["D_out"],
                             sol_set, float(epsilon), algorithm, rec, box, stats, log, flagged)


def _make_solver(problem, R, backend, bundle_params, solver):
    if solver is not None:
        return solver
    return ScalarSolver(problem, R, backend, bundle_params)


# --------------------------------------------------------------------------
# primal algorithm
# --------------------------------------------------------------------------


def primal_benson(problem: TwoStageProblem, R: RiskMeasure, epsilon: float, backend: str = "auto",
                  bundle_params: Optional[BundleParams] = None, max_iter: int = 1000,
                  solver: Optional[ScalarSolver] = None) -> VectorSolveResult:
    """Outer approximation of the upper image driven by entry-height problems.

    Vertices of the current outer approximation are processed in lexicographic
    order; the first vertex whose entry height exceeds ``epsilon`` yields a
    supporting halfspace and the vertex sweep restarts.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    t0 = time.perf_counter()
    solver = _make_solver(problem, R, backend, bundle_params, solver)
    J = problem.J
    sol_set = WeakSolutionSet()
    W0 = initial_weights(R)
    outer = Polyhedron(np.zeros((0, J)), np.zeros(0))
    for w in W0:
        rec = solver.p1(w)
        sol_set.add_point(rec.x, rec.y, rec.z)
        sol_set.add_weight(w, rec.bound)
        outer = outer.add_halfspace(w, rec.value)
    cache: dict = {}
    log = []
    flagged = False
    k = 0
    while True:
        V = outer.vertices
        cut = None
        worst = -np.inf
        for v in V:
            key = tuple(np.round(v, 10))
            if key not in cache:
                cache[key] = solver.p2(v, sol_set.Z)
                rec = cache[key]
                flagged |= rec.flagged
                sol_set.add_point(rec.x, rec.y, rec.z)
                sol_set.add_weight(rec.gamma, rec.gamma_bound)
            rec = cache[key]
            worst = max(worst, rec.alpha)
            if rec.alpha > epsilon:
                cut = (rec.gamma, float(rec.gamma @ rec.z))
                break
        log.append({"k": k, "vertices": int(V.shape[0]), "worst": float(worst),
                    "cuts": outer.n_halfspaces - len(W0)})
        if cut is None:
            break
        outer = outer.add_halfspace(*cut)
        k += 1
        if k >= max_iter:
            logger.warning("primal algorithm hit the iteration budget")
            flagged = True
            break
    res = _finish(sol_set, R, epsilon, "primal", solver, t0, log, k, flagged, dual_box_halfspaces(R))
    res.stats["outer_vertices"] = int(outer.vertices.shape[0])
    return res


# --------------------------------------------------------------------------
# dual algorithm
# --------------------------------------------------------------------------


def dual_benson(problem: TwoStageProblem, R: RiskMeasure, epsilon: float, backend: str = "auto",
                bundle_params: Optional[BundleParams] = None, max_iter: int = 1000,
                solver: Optional[ScalarSolver] = None) -> VectorSolveResult:
    """Outer approximation of the lower image driven by weighted-sum problems.

    Starts from the supporting halfspace at the solution for equal weights
    intersected with the weight box, then processes vertices in lexicographic
    order, cutting at the first vertex that lies more than ``epsilon`` above
    the lower image.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    t0 = time.perf_counter()
    solver = _make_solver(problem, R, backend, bundle_params, solver)
    J = problem.J
    sol_set = WeakSolutionSet()
    box = dual_box_halfspaces(R)
    eta = np.full(J, 1.0 / J)
    cache: dict = {}
    rec = solver.p1(eta)
    cache[tuple(np.round(eta, 12))] = rec
    sol_set.add_point(rec.x, rec.y, rec.z)
    sol_set.add_weight(eta, rec.bound)
    outer = Polyhedron.from_halfspaces([_dual_cut(rec.z)] + box, J)
    log = []
    flagged = rec.flagged
    k = 0
    while True:
        V = outer.vertices
        cut = None
        worst = -np.inf
        for t in V:
            w = _complete(t)
            key = tuple(np.round(w, 12))
            if key not in cache:
                cache[key] = solver.p1(w)
                r = cache[key]
                flagged |= r.flagged
                sol_set.add_point(r.x, r.y, r.z)
            r = cache[key]
            excess = float(t[-1] - r.value)
            worst = max(worst, excess)
            if np.all(w > 1e-12) or excess <= epsilon:
                sol_set.add_weight(w, r.bound)
            if excess > epsilon:
                cut = _dual_cut(r.z)
                break
        log.append({"k": k, "vertices": int(V.shape[0]), "worst": worst,
                    "cuts": outer.n_halfspaces - len(box)})
        if cut is None:
            break
        outer = outer.add_halfspace(*cut)
        k += 1
        if k >= max_iter:
            logger.warning("dual algorithm hit the iteration budget")
            flagged = True
            break
    res = _finish(sol_set, R, epsilon, "dual", solver, t0, log, k, flagged, box)
    res.stats["outer_vertices"] = int(outer.vertices.shape[0])
    return res


# --------------------------------------------------------------------------
# verification
# --------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    detail: str = ""


@dataclass
class SandwichReport:
    checks: list
    epsilon: float
    tol: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __str__(self) -> str:
        lines = [f"sandwich report (epsilon={self.epsilon:g}, tol={self.tol:.1e})"]
        for c in self.checks:
            lines.append(f"  [{'PASS' if c.passed else 'FAIL'}] {c.name}: worst={c.worst:.3e} {c.detail}")
        return "\n".join(lines)


def vertex_gaps(P_out: Polyhedron, P_in: Polyhedron) -> np.ndarray:
    """Smallest ``t`` with ``v + t * 1`` in ``P_in`` for every vertex ``v`` of ``P_out``."""
    V = P_out.vertices
    if V.shape[0] == 0:
        return np.zeros(0)
    A, b = P_in.A, P_in.b
    if A.shape[0] == 0:
        return np.full(V.shape[0], -np.inf)
    s = A.sum(axis=1)
    if np.any(s <= 0):
        raise ValueError("inner approximation has a facet normal without positive mass")
    return np.max((b[None, :] - V @ A.T) / s[None, :], axis=1)


def verify_sandwich(result: VectorSolveResult, epsilon: Optional[float] = None,
                    problem: Optional[TwoStageProblem] = None, R: Optional[RiskMeasure] = None,
                    tol: Optional[float] = None) -> SandwichReport:
    """Check the inner/outer approximation pair of a solve.

    Checks
    ------
    (i) every vertex ``v`` of ``P_out`` has ``v + epsilon * 1`` in ``P_in`` and
        every extreme direction of ``P_out`` lies in the image recession cone;
    (ii) every stored point lies in ``P_out``;
    (iii) every generator of ``D_in`` lies in ``D_out``;
    (iv) every stored point belongs to ``R(C x + Q y)`` (needs ``problem`` and ``R``).

    ``tol`` defaults to ``1e-7`` plus the largest recorded solver gap.
    """
    eps = result.epsilon if epsilon is None else float(epsilon)
    if tol is None:
        tol = 1e-7 + float(result.stats.get("max_gap", 0.0))
    checks = []
    # (i)
    gaps = vertex_gaps(result.P_out, result.P_in)
    worst = float(gaps.max()) if gaps.size else -np.inf
    rays = result.P_out.rays
    lines = result.P_out.lines
    cone = Cone(result.recession)
    bad_rays = [r for r in rays if not cone.contains(r, tol=1e-7)]
    ok = (worst <= eps + tol) and not bad_rays and lines.shape[0] == 0 and gaps.size > 0
    detail = f"({gaps.size} vertices"
    if bad_rays or lines.shape[0]:
        detail += f", {len(bad_rays)} bad rays, {lines.shape[0]} lines"
    checks.append(CheckResult("outer vertices within epsilon of inner", ok, worst, detail + ")"))
    # (ii)
    Z = result.solution_set.Z
    sl = result.P_out.slack(Z).min() if result.P_out.n_halfspaces else 0.0
    checks.append(CheckResult("points inside outer approximation", bool(sl >= -tol), float(-sl)))
    # (iii)
    Dv = result.D_in.points
    if Dv.shape[0]:
        sd = result.D_out.slack(Dv).min() if result.D_out.n_halfspaces else 0.0
    else:
        sd = 0.0
    checks.append(CheckResult("inner lower image inside outer lower image", bool(sd >= -tol),
                              float(-sd)))
    # (iv)
    if problem is not None and R is not None:
        worst_m = 0.0
        ok = True
        for e in result.solution_set.entries:
            u = problem.costs(e["x"], e["y"])
            if not R.membership(u, problem.p, e["z"], tol=1e-7):
                ok = False
                worst_m = max(worst_m, float(R.entry_alpha(u, problem.p, e["z"])))
        checks.append(CheckResult("points attained by their decisions", ok, worst_m))
    else:
        checks.append(CheckResult("points attained by their decisions", True, 0.0, "(skipped)"))
    return SandwichReport(checks, eps, tol)


__all__ = ["ScalarSolver", "P1Record", "P2Record", "WeakSolutionSet", "VectorSolveResult",
           "primal_benson", "dual_benson", "build_approximations", "verify_sandwich",
           "SandwichReport", "CheckResult", "vertex_gaps", "image_recession_rays",
           "initial_weights", "dual_box_halfspaces"]
