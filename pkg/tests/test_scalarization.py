import math

import numpy as np
import pytest
from scipy.optimize import linprog, minimize

from vopt_risk.model import PortfolioSpec, generate_portfolio
from vopt_risk.risk import make_risk
from vopt_risk.scalarization import (ScalarizationError, ld2_value, solve_p1_direct,
                                     solve_p2_direct)

TINY_ENTROPIC = math.log(0.5 * math.e + 0.5 * math.e ** 3)


def extensive_feasible(problem, x, y, tol=1e-7):
    if np.abs(problem.A @ x - problem.b).max() > tol or x.min() < -tol or y.min() < -tol:
        return False
    return all(np.abs(s.T @ x + s.W @ y[i] - s.h).max() <= tol for i, s in enumerate(problem.scenarios))


def cvar_p1_oracle(problem, nu, w):
    """Rockafellar-Uryasev LP over (x, y, t, s) for the orthant cone, built densely."""
    M, N, I, J = problem.M, problem.N, problem.I, problem.J
    p = problem.p
    n = M + I * N + J + I * J
    c = np.zeros(n)
    ot, os_ = M + I * N, M + I * N + J
    c[ot:ot + J] = w
    for i in range(I):
        for j in range(J):
            c[os_ + i * J + j] = w[j] * p[i] / (1 - nu[j])
    Aeq, beq = [], []
    for r in range(problem.K):
        row = np.zeros(n)
        row[:M] = problem.A[r]
        Aeq.append(row)
        beq.append(problem.b[r])
    for i, s in enumerate(problem.scenarios):
        for r in range(problem.L):
            row = np.zeros(n)
            row[:M] = s.T[r]
            row[M + i * N:M + (i + 1) * N] = s.W[r]
            Aeq.append(row)
            beq.append(s.h[r])
    Aub, bub = [], []
    for i, s in enumerate(problem.scenarios):
        for j in range(J):
            # u_i^j - t^j - s_i^j <= 0
            row = np.zeros(n)
            row[:M] = problem.C[j]
            row[M + i * N:M + (i + 1) * N] = s.Q[j]
            row[ot + j] = -1.0
            row[os_ + i * J + j] = -1.0
            Aub.append(row)
            bub.append(0.0)
    bounds = [(0, None)] * (M + I * N) + [(None, None)] * J + [(0, None)] * (I * J)
    res = linprog(c, A_ub=np.array(Aub), b_ub=bub, A_eq=np.array(Aeq), b_eq=beq, bounds=bounds,
                  method="highs")
    assert res.status == 0
    return res.fun


# ---- TINY-1 -----------------------------------------------------------------------------


def test_tiny_p1_cvar(tiny, tiny_cvar):
    res = solve_p1_direct(tiny, tiny_cvar, [0.5, 0.5])
    assert res.value == pytest.approx(3.0, abs=1e-9)
    np.testing.assert_allclose(res.z, [3.0, 3.0], atol=1e-9)
    np.testing.assert_allclose(res.x, [1.0], atol=1e-9)
    np.testing.assert_allclose(res.y, [[1.0], [1.0]], atol=1e-9)
    assert res.backend == "direct"


def test_tiny_p1_single_objective(tiny, tiny_cvar):
    res = solve_p1_direct(tiny, tiny_cvar, [1.0, 0.0])
    assert res.value == pytest.approx(3.0, abs=1e-9)
    assert res.z[0] == pytest.approx(3.0, abs=1e-9)
    assert res.z[1] >= 3.0 - 1e-9


def test_tiny_p1_entropic(tiny, tiny_entropic):
    res = solve_p1_direct(tiny, tiny_entropic, [0.5, 0.5])
    assert res.value == pytest.approx(TINY_ENTROPIC, abs=1e-6)
    assert res.bound <= TINY_ENTROPIC + 1e-9
    assert tiny_entropic.membership(tiny.costs(res.x, res.y), tiny.p, res.z, tol=1e-7)


@pytest.mark.parametrize("v, alpha", [((0, 0), 3.0), ((3, 3), 0.0), ((4, 4), -1.0)])
def test_tiny_p2_cvar(tiny, tiny_cvar, v, alpha):
    res = solve_p2_direct(tiny, tiny_cvar, v)
    assert res.alpha == pytest.approx(alpha, abs=1e-9)
    assert res.gamma.min() >= 0 and res.gamma.sum() == pytest.approx(1.0, abs=1e-8)
    np.testing.assert_allclose(res.z, np.asarray(v) + alpha, atol=1e-9)
    for probe in ([3, 3], [3, 4], [4, 3]):
        assert res.gamma @ probe >= res.gamma @ res.z - 1e-6


def test_tiny_p2_entropic(tiny, tiny_entropic):
    res = solve_p2_direct(tiny, tiny_entropic, [0.0, 0.0])
    assert res.alpha == pytest.approx(TINY_ENTROPIC, abs=1e-6)
    assert res.gamma.sum() == pytest.approx(1.0, abs=1e-8)


def test_weight_outside_dual_cone(tiny):
    R = make_risk("cvar", [0.5, 0.5], dual_cone_generators=[[2, 1], [1, 2]])
    with pytest.raises(ScalarizationError):
        solve_p1_direct(tiny, R, [1.0, 0.0])
    with pytest.raises(ValueError):
        solve_p1_direct(tiny, R, [-1.0, 2.0])


# ---- generated instances ------------------------------------------------------------------


def test_cvar_p1_matches_independent_lp(desk20):
    R = make_risk("cvar", [0.8, 0.9])
    rng = np.random.default_rng(1)
    for _ in range(8):
        w = rng.dirichlet([1, 1])
        res = solve_p1_direct(desk20, R, w)
        assert res.value == pytest.approx(cvar_p1_oracle(desk20, R.nu, w), abs=1e-8)
        assert extensive_feasible(desk20, res.x, res.y)
        u = desk20.costs(res.x, res.y)
        assert R.membership(u, desk20.p, res.z, tol=1e-7)
        assert w @ res.z == pytest.approx(res.value, abs=1e-9)


def test_entropic_p1_matches_nonlinear_solver():
    prob = generate_portfolio(PortfolioSpec(J=2, I=4, rng_seed=2))
    R = make_risk("entropic", [2.0, 3.0])
    w = np.array([0.4, 0.6])
    res = solve_p1_direct(prob, R, w)
    M, N, I = prob.M, prob.N, prob.I
    E = [np.hstack([prob.A, np.zeros((prob.K, I * N))])]
    e = [prob.b]
    for i, s in enumerate(prob.scenarios):
        row = np.zeros((prob.L, M + I * N))
        row[:, :M] = s.T
        row[:, M + i * N:M + (i + 1) * N] = s.W
        E.append(row)
        e.append(s.h)
    E, e = np.vstack(E), np.concatenate(e)

    def risk_of(v):
        x, y = v[:M], v[M:].reshape(I, N)
        return R.component_risk(prob.costs(x, y), prob.p)

    # for the orthant, min w @ z over R(u) is w @ (componentwise entropic risk)
    x0 = np.concatenate([res.x, res.y.ravel()])
    out = minimize(lambda v: w @ risk_of(v), x0 * 0.5 + 0.1, method="SLSQP",
                   constraints=[{"type": "eq", "fun": lambda v: E @ v - e}],
                   bounds=[(0, None)] * x0.size, options={"ftol": 1e-12, "maxiter": 1000})
    assert out.success
    assert res.value == pytest.approx(out.fun, abs=1e-5)
    assert res.bound <= out.fun + 1e-7


def test_p2_consistency_and_supporting_halfspaces(desk20):
    R = make_risk("cvar", [0.8, 0.9])
    rng = np.random.default_rng(2)
    probes = np.array([solve_p1_direct(desk20, R, rng.dirichlet([1, 1])).z for _ in range(20)])
    centre = probes.mean(axis=0)
    for _ in range(6):
        v = centre + rng.normal(scale=0.05, size=2)
        res = solve_p2_direct(desk20, R, v)
        assert extensive_feasible(desk20, res.x, res.y)
        u = desk20.costs(res.x, res.y)
        assert R.membership(u, desk20.p, v + res.alpha, tol=1e-7)
        assert res.gamma.min() >= 0 and res.gamma.sum() == pytest.approx(1.0, abs=1e-8)
        assert np.all(probes @ res.gamma >= res.gamma @ (v + res.alpha) - 1e-6)
        # strong duality: P2(v) = P1(gamma) - gamma @ v
        assert ld2_value(desk20, R, res.gamma, v) == pytest.approx(res.alpha, abs=1e-7)


def test_weak_minimizer_consistency(desk20):
    R = make_risk("cvar", [0.8, 0.9])
    rng = np.random.default_rng(3)
    W = rng.dirichlet([1, 1], size=20)
    Z = np.array([solve_p1_direct(desk20, R, w).z for w in W])
    for w, z in zip(W, Z):
        assert np.all(Z @ w >= w @ z - 1e-7)


def test_non_orthant_cone_p1_p2(desk20):
    R = make_risk("cvar", [0.8, 0.9], dual_cone_generators=[[2, 1], [1, 2]])
    w = np.array([0.5, 0.5])
    res = solve_p1_direct(desk20, R, w)
    u = desk20.costs(res.x, res.y)
    assert R.membership(u, desk20.p, res.z, tol=1e-7)
    # with a larger cone the optimum can only improve
    assert res.value <= solve_p1_direct(desk20, make_risk("cvar", [0.8, 0.9]), w).value + 1e-9
    p2 = solve_p2_direct(desk20, R, res.z - 0.05)
    assert p2.alpha == pytest.approx(R.entry_alpha(desk20.costs(p2.x, p2.y), desk20.p, res.z - 0.05), abs=1e-7)
    assert R.in_dual_cone(p2.gamma, tol=1e-8)
