"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from generators import dual_objective, random_lp, random_master, random_u
from oracles import brute_force_vertices, central_gradient, random_polyhedron, same_point_sets
from vopt_risk.benson import dual_benson, primal_benson, verify_sandwich
from vopt_risk.bundle import BundleParams, ScenarioSubproblems, run_bundle_p1, run_bundle_p2
from vopt_risk.model import PortfolioSpec, generate_portfolio, tiny1
from vopt_risk.opt_kernel import kkt_residual, qp_kkt_residual, solve_lp, solve_qp
from vopt_risk.polyhedra import Polyhedron
from vopt_risk.risk import make_risk
from vopt_risk.scalarization import ld2_value, solve_p1_direct, solve_p2_direct

ALGORITHMS = {"primal": primal_benson, "dual": dual_benson}
DESK_NU = [0.8, 0.9]


def report(k, ok, detail):
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def desk_cvar_50():
    """Two-asset CVaR desk instance with 50 scenarios on the orthant."""
    return generate_portfolio(PortfolioSpec(J=2, I=50, rng_seed=2024)), make_risk("cvar", DESK_NU)


def reference_points(z0, n=10):
    return [z0 + 0.05 * np.array([math.cos(0.6 * k), math.sin(0.6 * k)]) - 0.02 for k in range(n)]


@pytest.fixture(scope="module")
def tiny_runs():
    """Both algorithms with both backends on TINY-1, with their wall time."""
    P, R = tiny1(), make_risk("cvar", [0.5, 0.5])
    t0 = time.perf_counter()
    runs = {(a, b): f(P, R, 1e-4, backend=b) for a, f in ALGORITHMS.items() for b in ("direct", "bundle")}
    return P, R, runs, time.perf_counter() - t0


@pytest.fixture(scope="module")
def desk_runs():
    """Dual algorithm with the bundle backend and primal with the direct backend on DESK-CVaR-50."""
    P, R = desk_cvar_50()
    return P, R, {("dual", "bundle"): dual_benson(P, R, 1e-3, backend="bundle"),
                  ("primal", "direct"): primal_benson(P, R, 1e-3, backend="direct")}


# ---- 1 -------------------------------------------------------------------------------------


def test_criterion_1_tiny_exactness(tiny_runs):
    P, R, runs, elapsed = tiny_runs
    t0 = time.perf_counter()
    worst_v = max(np.abs(r.P_out.vertices - 3.0).max() for r in runs.values())
    ok_v = all(r.P_out.vertices.shape[0] == 1 for r in runs.values()) and worst_v <= 1e-6
    rng = np.random.default_rng(1)
    sub = ScenarioSubproblems(P)
    worst_p1 = 0.0
    for w in rng.dirichlet([1, 1], size=20):
        worst_p1 = max(worst_p1, abs(solve_p1_direct(P, R, w).value - 3.0),
                       abs(run_bundle_p1(P, R, w, BundleParams(), sub).value - 3.0))
    elapsed += time.perf_counter() - t0
    ok = ok_v and worst_p1 <= 1e-6 and elapsed < 5.0
    report(1, ok, f"vertex error {worst_v:.1e}, P1 error {worst_p1:.1e}, {elapsed:.2f}s")


# ---- 2 -------------------------------------------------------------------------------------


def test_criterion_2_backend_equivalence():
    R = make_risk("cvar", DESK_NU)
    t0 = time.perf_counter()
    worst1 = worst2 = 0.0
    params = BundleParams(eps=1e-6)
    for I in (10, 50, 100):
        for seed in (1, 2, 3):
            P = generate_portfolio(PortfolioSpec(J=2, I=I, rng_seed=seed))
            sub = ScenarioSubproblems(P)
            rng = np.random.default_rng(seed)
            for w in rng.dirichlet([1, 1], size=20):
                d = solve_p1_direct(P, R, w).value
                b = run_bundle_p1(P, R, w, params, sub).value
                worst1 = max(worst1, abs(b - d) / (1 + abs(d)))
            for v in reference_points(solve_p1_direct(P, R, [0.5, 0.5]).z):
                d = solve_p2_direct(P, R, v).alpha
                b = run_bundle_p2(P, R, v, params, sub).value
                worst2 = max(worst2, abs(b - d) / (1 + abs(d)))
    elapsed = time.perf_counter() - t0
    ok = worst1 <= 1e-4 and worst2 <= 1e-4 and elapsed < 600
    report(2, ok, f"relative P1 gap {worst1:.1e}, relative P2 gap {worst2:.1e}, {elapsed:.0f}s")


# ---- 3 -------------------------------------------------------------------------------------


def test_criterion_3_recovery_convergence():
    P, R = desk_cvar_50()
    sub = ScenarioSubproblems(P)
    eps_list = (1e-3, 1e-4, 1e-5, 1e-6)
    worst_res = worst_obj = 0.0
    monotone = True
    for w in ([0.5, 0.5], [0.2, 0.8], [0.9, 0.1]):
        direct = solve_p1_direct(P, R, w).value
        res = [run_bundle_p1(P, R, w, BundleParams(eps=e), sub) for e in eps_list]
        r = [x.residual for x in res]
        monotone &= all(b <= 3 * a + 1e-12 for a, b in zip(r, r[1:]))
        worst_res = max(worst_res, r[-1])
        worst_obj = max(worst_obj, abs(res[-1].primal_value - direct))
    ok = worst_res <= 1e-3 and worst_obj <= 1e-3 and monotone
    report(3, ok, f"residual {worst_res:.1e}, objective gap {worst_obj:.1e}, "
                  f"residuals {'nonincreasing' if monotone else 'increasing'}")


# ---- 4 -------------------------------------------------------------------------------------


def test_criterion_4_weight_recovery():
    P, R = desk_cvar_50()
    sub = ScenarioSubproblems(P)
    eps = 1e-6
    worst = 0.0
    for v in reference_points(solve_p1_direct(P, R, [0.5, 0.5]).z):
        d = solve_p2_direct(P, R, v).alpha
        b = run_bundle_p2(P, R, v, BundleParams(eps=eps), sub)
        worst = max(worst, abs(ld2_value(P, R, b.gamma, v) - d))
    report(4, worst <= 10 * eps, f"dual objective gap {worst:.1e} (bound {10 * eps:.0e})")


# ---- 5 -------------------------------------------------------------------------------------


def test_criterion_5_sandwich(tiny_runs, desk_runs):
    failed = []
    count = 0
    for (P, R, runs) in (tiny_runs[:3], desk_runs):
        for key, res in runs.items():
            count += 1
            if not verify_sandwich(res, problem=P, R=R).passed:
                failed.append(f"{key} on I={P.I}")
    P = generate_portfolio(PortfolioSpec(J=2, I=50, rng_seed=2024))
    R = make_risk("entropic", [0.1, 0.1], dual_cone_generators=[[2, 1], [1, 2]])
    for eps in (0.1, 0.05):
        for name, f in ALGORITHMS.items():
            count += 1
            res = f(P, R, eps, backend="direct")
            if not verify_sandwich(res, problem=P, R=R).passed:
                failed.append(f"entropic {name} eps={eps}")
    report(5, not failed, f"{count - len(failed)}/{count} sandwiches verified"
                          + (f" (failed: {', '.join(failed)})" if failed else ""))


# ---- 6 -------------------------------------------------------------------------------------


def test_criterion_6_trend():
    P = generate_portfolio(PortfolioSpec(J=2, I=500, rng_seed=7))
    R = make_risk("cvar", DESK_NU)
    ok = True
    parts = []
    for name, f in ALGORITHMS.items():
        runs = [f(P, R, e, backend="direct") for e in (1e-2, 1e-3, 1e-4)]
        verts = [r.stats["vertices"] for r in runs]
        solves = [r.stats["scalar_solves"] for r in runs]
        ok &= all(a <= b for a, b in zip(verts, verts[1:]))
        ok &= all(a <= b for a, b in zip(solves, solves[1:]))
        ok &= all(verify_sandwich(r, problem=P, R=R).passed for r in runs)
        parts.append(f"{name} solves {'/'.join(map(str, solves))} vertices {'/'.join(map(str, verts))}")
    report(6, ok, "; ".join(parts))


# ---- 7 -------------------------------------------------------------------------------------


def test_criterion_7_kernel_oracles():
    rng = np.random.default_rng(2024)
    lp_worst = 0.0
    for _ in range(200):
        lp = random_lp(rng)
        scale = 1 + np.abs(lp.c).max() + np.abs(lp.b_eq).max(initial=0) + np.abs(lp.g).max(initial=0)
        for method in ("simplex", "highs"):
            sol = solve_lp(lp, method)
            gap = abs(sol.value - dual_objective(lp, sol)) if sol.optimal else np.inf
            lp_worst = max(lp_worst, gap / scale, kkt_residual(lp, sol) / scale)
    qp_worst = 0.0
    for _ in range(100):
        qp = random_master(rng, n_prox=int(rng.integers(3, 12)), n_cuts=int(rng.integers(2, 15)))
        sol = solve_qp(qp)
        qp_worst = max(qp_worst, qp_kkt_residual(qp, sol) if sol.optimal else np.inf)
    poly_bad = 0
    for k in range(200):
        d = 2 + k % 2
        A, b = random_polyhedron(rng, d, int(rng.integers(d + 1, 9)))
        P = Polyhedron(A, b)
        poly_bad += not same_point_sets(P.vertices, brute_force_vertices(P.A, P.b), tol=1e-6)
    fd_worst = 0.0
    R = make_risk("entropic", [0.6, 1.7])
    for _ in range(100):
        p = rng.dirichlet(np.ones(4))
        m = rng.uniform(0.05, 1.0, size=(2, 4))
        g = R.beta_tilde_subgradient(m, p)
        fd = central_gradient(lambda mm: -R.penalty_beta_tilde(mm, p), m)
        fd_worst = max(fd_worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1.0))))
    ok = lp_worst <= 1e-8 and qp_worst <= 1e-7 and poly_bad == 0 and fd_worst <= 1e-5
    report(7, ok, f"LP {lp_worst:.1e}, QP KKT {qp_worst:.1e}, polyhedra mismatches {poly_bad}/200, "
                  f"gradient {fd_worst:.1e}")


# ---- 8 -------------------------------------------------------------------------------------


def test_criterion_8_axioms():
    risks = [make_risk("cvar", [0.3, 0.9]),
             make_risk("cvar", [0.5, 0.7], dual_cone_generators=[[2, 1], [1, 2]]),
             make_risk("entropic", [0.5, 2.0]),
             make_risk("entropic", [0.1, 0.1], dual_cone_generators=[[2, 1], [1, 2]])]
    rng = np.random.default_rng(8)
    bad = {"translativity": 0, "monotonicity": 0, "homogeneity": 0, "conversion": 0}
    for t in range(1000):
        R = risks[t % len(risks)]
        u, p = random_u(rng)
        z0, z = rng.normal(size=2), rng.normal(size=2)
        if R.membership(u, p, z) != R.membership(u + z0[:, None], p, z + z0):
            bad["translativity"] += 1
        if abs(R.entry_alpha(u + z0[:, None], p, z + z0) - R.entry_alpha(u, p, z)) > 1e-9:
            bad["translativity"] += 1
        u2 = u + rng.uniform(0, 1, size=u.shape) * (rng.random(u.shape) < 0.5)
        if R.entry_alpha(u, p, z) > R.entry_alpha(u2, p, z) + 1e-9:
            bad["monotonicity"] += 1
    for _ in range(1000):
        u, p = random_u(rng, I=6)
        gamma = float(rng.uniform(0.01, 100))
        lhs = risks[0].cvar_vector(gamma * u, p)
        if np.abs(lhs - gamma * risks[0].cvar_vector(u, p)).max() > 1e-9 * max(1.0, np.abs(lhs).max()):
            bad["homogeneity"] += 1
    for t in range(1000):
        R = risks[t % len(risks)]
        u, p = random_u(rng, I=5)
        mu = rng.dirichlet(np.ones(5), size=2)
        gamma = rng.dirichlet(np.ones(R.dual_generators.shape[0])) @ R.dual_generators
        m = gamma[:, None] * mu
        err = max(abs(gamma @ (mu * u).sum(axis=1) - np.sum(m * u)), abs(gamma.sum() - m.sum()))
        bt, b = R.penalty_beta_tilde(m, p), R.penalty_beta(mu, gamma, p)
        same = (np.isinf(bt) and np.isinf(b)) or abs(bt - b) <= 1e-9
        if err > 1e-9 or not same:
            bad["conversion"] += 1
    ok = not any(bad.values())
    report(8, ok, ", ".join(f"{k} {1000 - v}/1000" for k, v in bad.items()))
