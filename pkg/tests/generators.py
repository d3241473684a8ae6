"""Random instance generators shared by the unit tests and the acceptance suite."""

import numpy as np

from vopt_risk.opt_kernel import LinearProgram, RegularizedQP


def random_lp(rng, n=None, m_eq=None, m_in=None):
    """Feasible, bounded LP built from a primal point and a dual-feasible certificate."""
    n = n or int(rng.integers(2, 31))
    m_eq = int(rng.integers(0, max(1, n // 2))) if m_eq is None else m_eq
    m_in = int(rng.integers(0, n)) if m_in is None else m_in
    x0 = np.where(rng.random(n) < 0.5, 0.0, rng.random(n) * 3)
    E = rng.normal(size=(m_eq, n))
    G = rng.normal(size=(m_in, n))
    g = G @ x0 - rng.random(m_in) * (rng.random(m_in) < 0.5)
    y = rng.normal(size=m_eq)
    z = rng.random(m_in)
    c = E.T @ y + G.T @ z + rng.random(n)
    return LinearProgram(c, E, E @ x0, G, g)


def dual_objective(lp, sol):
    return float(lp.b_eq @ sol.duals_eq + lp.g @ sol.duals_ineq)


def random_master(rng, n_prox=6, n_cuts=8):
    """Cut-plane master: maximize theta - rho |u - c|^2, theta <= a_l @ u + b_l, u in simplex."""
    A = rng.normal(size=(n_cuts, n_prox))
    b = rng.normal(size=n_cuts)
    G = np.hstack([A, -np.ones((n_cuts, 1))])
    c = np.zeros(n_prox + 1)
    c[-1] = 1.0
    E = np.append(np.ones(n_prox), 0.0)[None, :]
    center = rng.dirichlet(np.ones(n_prox))
    return RegularizedQP(c, float(rng.uniform(0.1, 2.0)), np.arange(n_prox), center,
                         E=E, e=[1.0], G=G, g=-b, nonneg=np.arange(n_prox))


def random_u(rng, J=2, I=4):
    return rng.normal(size=(J, I)), rng.dirichlet(np.ones(I))
