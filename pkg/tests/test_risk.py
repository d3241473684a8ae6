import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from generators import random_u
from oracles import central_gradient, cvar_greedy
from vopt_risk.risk import (CVaR, Entropic, cvar, cvar_rockafellar_uryasev, entry_alpha,
                            entry_alpha_bisect, make_risk, membership, penalty_beta,
                            penalty_beta_tilde, scalarize_phi)

TINY_U = np.array([[1.0, 3.0], [3.0, 1.0]])
HALF = np.array([0.5, 0.5])
TINY_ENTROPIC = math.log(0.5 * math.e + 0.5 * math.e ** 3)


# ---- CVaR ---------------------------------------------------------------------------


def test_cvar_examples():
    assert cvar([1, 2, 3, 4], np.full(4, 0.25), 0.75) == pytest.approx(4.0)
    assert cvar([2.5, 2.5, 2.5], np.full(3, 1 / 3), 0.3) == pytest.approx(2.5)
    np.testing.assert_allclose(CVaR([0.5, 0.5]).cvar_vector(TINY_U, HALF), [3.0, 3.0])


def test_cvar_formulas_agree():
    rng = np.random.default_rng(1)
    for _ in range(200):
        I = int(rng.integers(1, 9))
        x, p = rng.normal(size=I), rng.dirichlet(np.ones(I))
        nu = float(rng.uniform(0, 0.99))
        ref = cvar_greedy(x, p, nu)
        assert cvar(x, p, nu) == pytest.approx(ref, abs=1e-9)
        assert cvar_rockafellar_uryasev(x, p, nu) == pytest.approx(ref, abs=1e-9)


def test_cvar_membership_boundary():
    R = CVaR([0.5, 0.5])
    assert R.membership(TINY_U, HALF, [3.0, 3.0])
    assert not R.membership(TINY_U, HALF, [3.0 - 1e-3, 3.0])
    assert membership(R, TINY_U, HALF, [5.0, 3.0])


def test_cvar_scalarize_and_alpha():
    R = CVaR([0.5, 0.5])
    val, z = scalarize_phi(R, HALF, TINY_U, HALF)
    assert val == pytest.approx(3.0)
    np.testing.assert_allclose(z, [3.0, 3.0])
    assert entry_alpha(R, TINY_U, HALF, [0.0, 0.0]) == pytest.approx(3.0)
    assert entry_alpha(R, TINY_U, HALF, [4.0, 4.0]) == pytest.approx(-1.0)


def test_cvar_scalarize_outside_dual_cone():
    R = make_risk("cvar", [0.5, 0.5], dual_cone_generators=[[2, 1], [1, 2]])
    val, z = R.scalarize([1.0, 0.0], TINY_U, HALF)
    assert val == -np.inf and z is None
    val, _ = R.scalarize([2 / 3, 1 / 3], TINY_U, HALF)
    assert val == pytest.approx(3.0)


def test_cvar_penalty():
    R = CVaR([0.5, 0.8])
    p = np.full(4, 0.25)
    mu = np.tile(p, (2, 1))
    assert penalty_beta(R, mu, HALF, p) == 0.0
    mu_bad = np.array([[1.0, 0, 0, 0], [0.25, 0.25, 0.25, 0.25]])
    assert penalty_beta(R, mu_bad, HALF, p) == np.inf
    assert penalty_beta_tilde(R, mu, p) == 0.0
    with pytest.raises(ValueError, match="domain constraints"):
        R.beta_tilde_subgradient(mu, p)


def test_cvar_alpha_matches_bisection():
    rng = np.random.default_rng(2)
    R = make_risk("cvar", [0.6, 0.9], dual_cone_generators=[[2, 1], [1, 2]])
    for _ in range(50):
        u, p = random_u(rng)
        v = rng.normal(size=2)
        assert R.entry_alpha(u, p, v) == pytest.approx(entry_alpha_bisect(R, u, p, v), abs=1e-8)


# ---- entropic -----------------------------------------------------------------------


def test_entropic_closed_form_tiny():
    R = Entropic([1.0, 1.0])
    val, z = R.scalarize(HALF, TINY_U, HALF)
    assert val == pytest.approx(TINY_ENTROPIC, abs=1e-12)
    np.testing.assert_allclose(z, [TINY_ENTROPIC] * 2, atol=1e-12)
    assert R.entry_alpha(TINY_U, HALF, [0.0, 0.0]) == pytest.approx(TINY_ENTROPIC, abs=1e-12)
    # per-coordinate membership bisection
    assert entry_alpha_bisect(R, TINY_U, HALF, [0.0, 0.0]) == pytest.approx(TINY_ENTROPIC, abs=1e-8)


def test_entropic_membership_basics():
    R = Entropic([0.5, 2.0])
    assert R.membership(np.zeros((2, 3)), np.full(3, 1 / 3), [0.0, 0.0])
    rng = np.random.default_rng(3)
    for _ in range(50):
        u, p = random_u(rng)
        z = R.component_risk(u, p) + rng.uniform(0, 1, 2)
        assert R.membership(u, p, z)
        assert R.membership(u, p, z + rng.uniform(0, 1, 2))


def test_entropic_penalties_vanish_at_reference():
    R = Entropic([1.0, 2.0])
    p = np.array([0.2, 0.3, 0.5])
    mu = np.tile(p, (2, 1))
    assert penalty_beta(R, mu, [0.3, 0.7], p) == pytest.approx(0.0, abs=1e-12)
    assert penalty_beta_tilde(R, np.zeros((2, 3)), p) == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(R.beta_tilde_subgradient(mu, p), 0.0, atol=1e-12)


@pytest.mark.parametrize("dual", [None, [[2, 1], [1, 2]], [[1, 0], [1, 1]]])
def test_entropic_scalarize_matches_constrained_minimization(dual):
    """Closed-form scalarization against a direct minimization of w @ z over R(u)."""
    R = make_risk("entropic", [0.7, 1.3], dual_cone_generators=dual)
    rng = np.random.default_rng(4)
    for _ in range(8):
        u, p = random_u(rng, I=3)
        S = R.dual_generators
        w = rng.dirichlet(np.ones(S.shape[0])) @ S
        w = w / w.sum()
        val, z = R.scalarize(w, u, p)
        assert R.membership(u, p, z, tol=1e-8)
        assert w @ z == pytest.approx(val, abs=1e-7)
        cons = [{"type": "ineq", "fun": (lambda zz, s=s: s @ R.expected_utility(u, p, zz))} for s in S]
        res = minimize(lambda zz: w @ zz, R.component_risk(u, p) + 1.0, constraints=cons,
                       method="SLSQP", options={"ftol": 1e-12, "maxiter": 500})
        assert res.success
        assert val == pytest.approx(res.fun, abs=1e-6)


@pytest.mark.parametrize("kind, params", [("cvar", [0.5, 0.75]), ("entropic", [0.8, 1.5])])
def test_dual_representation_on_grid(kind, params):
    """phi_w(u) equals the maximum of w @ E^mu[u] - beta(mu, w) over probability vectors."""
    R = make_risk(kind, params)
    rng = np.random.default_rng(5)
    step = 0.005
    a = np.arange(0, 1 + step / 2, step)
    A, B = np.meshgrid(a, a, indexing="ij")
    keep = A + B <= 1 + 1e-12
    grid = np.column_stack([A[keep], B[keep], np.clip(1 - A[keep] - B[keep], 0, None)])
    for _ in range(5):
        u, p = random_u(rng, I=3)
        w = rng.dirichlet([1, 1])
        best = 0.0
        for j in range(2):
            # the penalty separates over objectives: maximize one component at a time
            vals = w[j] * grid @ u[j] - _component_penalty(R, grid, w, p, j)
            best += vals.max()
        best += _constant_penalty(R, w)
        phi, _ = R.scalarize(w, u, p)
        assert best <= phi + 1e-9
        assert best >= phi - 0.05 * (1 + np.abs(u).max())


def _component_penalty(R, mu_j, w, p, j):
    """Penalty terms of objective ``j`` for every row of ``mu_j``."""
    if R.kind == "cvar":
        return np.where(np.all(mu_j <= p / (1 - R.nu[j]) + 1e-12, axis=1), 0.0, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        H = np.sum(np.where(mu_j > 0, mu_j * np.log(mu_j / p), 0.0), axis=1)
    return w[j] * H / R.delta[j]


def _constant_penalty(R, w):
    """Part of beta(mu, w) that does not depend on mu."""
    if R.kind == "cvar":
        return 0.0
    inf_val, _ = R.inner_inf(w)
    with np.errstate(divide="ignore", invalid="ignore"):
        wlogw = np.where(w > 0, w * np.log(w), 0.0)
    return -float(np.sum((-w + wlogw) / R.delta) + inf_val)


@pytest.mark.parametrize("dual", [None, [[2, 1], [1, 2]]])
def test_beta_tilde_gradient_finite_differences(dual):
    R = make_risk("entropic", [0.6, 1.7], dual_cone_generators=dual)
    rng = np.random.default_rng(6)
    for _ in range(20):
        p = rng.dirichlet(np.ones(4))
        m = rng.uniform(0.05, 1.0, size=(2, 4))
        g = R.beta_tilde_subgradient(m, p)
        fd = central_gradient(lambda mm: -R.penalty_beta_tilde(mm, p), m)
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


def test_beta_tilde_gradient_with_active_dual_cone():
    """Total masses outside C+ make the inner infimum hit the boundary of C+."""
    R = make_risk("entropic", [0.6, 1.7], dual_cone_generators=[[2, 1], [1, 2]])
    rng = np.random.default_rng(7)
    for _ in range(5):
        p = rng.dirichlet(np.ones(3))
        m = rng.uniform(0.2, 1.0, size=(2, 3))
        m[1] *= 0.05
        mass = m.sum(axis=1)
        assert not R.in_dual_cone(mass)
        g = R.beta_tilde_subgradient(m, p)
        fd = central_gradient(lambda mm: -R.penalty_beta_tilde(mm, p), m)
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


def test_beta_tilde_subgradient_rejects_zero_mass():
    R = Entropic([1.0, 1.0])
    with pytest.raises(ValueError, match="clamp"):
        R.beta_tilde_subgradient(np.array([[0.0, 1.0], [0.5, 0.5]]), HALF)


# ---- axioms (property tests) ----------------------------------------------------------

RISKS = [make_risk("cvar", [0.3, 0.9]), make_risk("cvar", [0.5, 0.7], dual_cone_generators=[[2, 1], [1, 2]]),
         make_risk("entropic", [0.5, 2.0]), make_risk("entropic", [0.1, 0.1], dual_cone_generators=[[2, 1], [1, 2]])]


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), k=st.integers(0, len(RISKS) - 1))
def test_translativity(seed, k):
    R = RISKS[k]
    rng = np.random.default_rng(seed)
    u, p = random_u(rng)
    z0 = rng.normal(size=2)
    v = rng.normal(size=2)
    a = R.entry_alpha(u, p, v)
    b = R.entry_alpha(u + z0[:, None], p, v + z0)
    assert b == pytest.approx(a, abs=1e-8)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), k=st.integers(0, len(RISKS) - 1))
def test_monotonicity(seed, k):
    R = RISKS[k]
    rng = np.random.default_rng(seed)
    u, p = random_u(rng)
    u2 = u + rng.uniform(0, 1, size=u.shape) * (rng.random(u.shape) < 0.5)
    v = rng.normal(size=2)
    assert R.entry_alpha(u, p, v) <= R.entry_alpha(u2, p, v) + 1e-9


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), gamma=st.floats(0.01, 100))
def test_cvar_positive_homogeneity(seed, gamma):
    rng = np.random.default_rng(seed)
    u, p = random_u(rng, I=6)
    R = RISKS[0]
    np.testing.assert_allclose(R.cvar_vector(gamma * u, p), gamma * R.cvar_vector(u, p),
                               rtol=1e-12, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), k=st.integers(0, len(RISKS) - 1))
def test_measure_conversion_identities(seed, k):
    R = RISKS[k]
    rng = np.random.default_rng(seed)
    u, p = random_u(rng, I=5)
    mu = rng.dirichlet(np.ones(5), size=2)
    S = R.dual_generators
    gamma = rng.dirichlet(np.ones(S.shape[0])) @ S
    m = gamma[:, None] * mu
    assert gamma @ (mu * u).sum(axis=1) == pytest.approx(np.sum(m * u), abs=1e-12)
    assert gamma.sum() == pytest.approx(m.sum(), abs=1e-12)
    bt, b = R.penalty_beta_tilde(m, p), R.penalty_beta(mu, gamma, p)
    if np.isinf(b):
        assert np.isinf(bt)
    else:
        assert bt == pytest.approx(b, abs=1e-9)


def test_make_risk_validation():
    with pytest.raises(ValueError):
        make_risk("cvar", [1.0, 0.5])
    with pytest.raises(ValueError):
        make_risk("entropic", [0.0, 1.0])
    with pytest.raises(ValueError):
        make_risk("var", [0.5, 0.5])
    with pytest.raises(ValueError):
        make_risk("cvar", [0.5, 0.5], cone_generators=[[1, 1], [1, 2]])
