"""Multivariate risk measures on finite probability spaces.

Two families are provided, both returning closed upper sets ``R(u)`` of
``R^J`` for a random cost vector ``u`` given by its realizations
(shape ``(J, I)``: row ``j`` holds objective ``j`` across scenarios):

* :class:`CVaR`: ``R(u) = (CVaR_{nu^j}(u^j))_j + C``.
* :class:`Entropic`: ``R(u) = {z : E[U(u - z)] in C}`` with the exponential
  utilities ``U^j(x) = (1 - exp(delta^j x)) / delta^j``.

Here ``C`` is a polyhedral ordering cone containing the nonnegative orthant.
"""

from __future__ import annotations

import itertools
import logging
from typing import Optional

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from .opt_kernel.config import DEFAULT_TOLERANCES
from .polyhedra import Cone

logger = logging.getLogger(__name__)

_MEMBER_TOL = DEFAULT_TOLERANCES.membership


def _xlogy(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``x * log(y)`` with ``0 * log(anything) = 0``."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    out = np.zeros(np.broadcast(x, y).shape)
    mask = np.broadcast_to(x != 0, out.shape)
    xb, yb = np.broadcast_to(x, out.shape), np.broadcast_to(y, out.shape)
    with np.errstate(divide="ignore"):
        out[mask] = xb[mask] * np.log(yb[mask])
    return out


def _check_u(u, p) -> tuple[np.ndarray, np.ndarray]:
    u = np.atleast_2d(np.asarray(u, float))
    p = np.asarray(p, float).ravel()
    if u.shape[1] != p.size:
        raise ValueError("u must have shape (J, I) with I = len(p)")
    return u, p


class RiskMeasure:
    """Common interface of the polyhedral-cone risk measures.

    Parameters
    ----------
    J : int
        Number of objectives.
    cone : Cone, optional
        Ordering cone ``C``; the nonnegative orthant by default.
    """

    kind = "abstract"

    def __init__(self, J: int, cone: Optional[Cone] = None):
        if J < 2:
            raise ValueError("at least two objectives are required")
        self.J = int(J)
        self.cone = Cone.orthant(self.J) if cone is None else cone
        if self.cone.dim != self.J:
            raise ValueError("cone dimension does not match the number of objectives")
        if not self.cone.contains_orthant():
            raise ValueError("the ordering cone must contain the nonnegative orthant")
        dual = self.cone.dual()
        self._dual_gens = np.array(dual.extreme_rays())
        self._cone_rays = np.array(self.cone.extreme_rays())
        self._orthant = self.cone.is_orthant()

    @property
    def dual_generators(self) -> np.ndarray:
        """Extreme rays of the dual cone ``C+`` (rows)."""
        return self._dual_gens

    @property
    def cone_rays(self) -> np.ndarray:
        """Extreme rays of ``C`` (rows); they describe ``C+`` by inequalities."""
        return self._cone_rays

    @property
    def is_orthant(self) -> bool:
        return self._orthant

    def in_dual_cone(self, w, tol: float = 1e-12) -> bool:
        w = np.asarray(w, float)
        return bool(np.all(self._cone_rays @ w >= -tol * max(1.0, np.abs(w).max())))

    def cone_slack(self, a: np.ndarray) -> np.ndarray:
        """``s @ a`` for every dual generator ``s`` (nonnegative iff ``a`` lies in ``C``)."""
        return self._dual_gens @ a

    # ---- interface ------------------------------------------------------------

    def membership(self, u, p, z, tol: float = _MEMBER_TOL) -> bool:
        raise NotImplementedError

    def scalarize(self, w, u, p) -> tuple[float, Optional[np.ndarray]]:
        raise NotImplementedError

    def penalty_beta(self, mu, w, p) -> float:
        raise NotImplementedError

    def penalty_beta_tilde(self, m, p) -> float:
        raise NotImplementedError

    def entry_alpha(self, u, p, v) -> float:
        return entry_alpha_bisect(self, u, p, v)

    def to_dict(self) -> dict:
        raise NotImplementedError


def entry_alpha_bisect(R: RiskMeasure, u, p, v, tol: float = DEFAULT_TOLERANCES.bisection) -> float:
    """Smallest ``alpha`` with ``v + alpha * 1`` in ``R(u)``, by bracketing and bisection.

    The upper end of the final bracket is returned, so the point is a member.
    """
    v = np.asarray(v, float)
    ones = np.ones_like(v)

    def member(a):
        return R.membership(u, p, v + a * ones, tol=0.0)

    step = 1.0
    if member(0.0):
        hi, lo = 0.0, -step
        while member(lo):
            hi = lo
            step *= 2.0
            lo = hi - step
    else:
        lo, hi = 0.0, step
        while not member(hi):
            lo = hi
            step *= 2.0
            hi = lo + step
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if member(mid):
            hi = mid
        else:
            lo = mid
    return hi


# --------------------------------------------------------------------------
# CVaR
# --------------------------------------------------------------------------


def cvar(x, p, nu: float) -> float:
    """Conditional value-at-risk (upper tail mean) of a discrete cost.

    Parameters
    ----------
    x : array_like
        Realizations.
    p : array_like
        Scenario probabilities.
    nu : float
        Confidence level in ``[0, 1)``.
    """
    x = np.asarray(x, float)
    p = np.asarray(p, float)
    tail = 1.0 - nu
    order = np.argsort(-x, kind="stable")
    xs, ps = x[order], p[order]
    before = np.concatenate([[0.0], np.cumsum(ps)[:-1]])
    weights = np.clip(tail - before, 0.0, ps)
    return float(weights @ xs / tail)


def cvar_rockafellar_uryasev(x, p, nu: float) -> float:
    """CVaR as ``min_t t + E[(x - t)^+] / (1 - nu)``, minimized over the atoms."""
    x = np.asarray(x, float)
    p = np.asarray(p, float)
    vals = np.array([t + p @ np.maximum(x - t, 0.0) / (1.0 - nu) for t in x])
    return float(vals.min())


class CVaR(RiskMeasure):
    """Multivariate CVaR ``R(u) = (CVaR_{nu^j}(u^j))_j + C``."""

    kind = "cvar"

    def __init__(self, nu, cone: Optional[Cone] = None):
        nu = np.asarray(nu, float).ravel()
        if np.any(nu < 0) or np.any(nu >= 1):
            raise ValueError("CVaR levels must lie in [0, 1)")
        super().__init__(nu.size, cone)
        self.nu = nu

    def cvar_vector(self, u, p) -> np.ndarray:
        u, p = _check_u(u, p)
        return np.array([cvar(u[j], p, self.nu[j]) for j in range(self.J)])

    def membership(self, u, p, z, tol: float = _MEMBER_TOL) -> bool:
        q = self.cvar_vector(u, p)
        d = np.asarray(z, float) - q
        return bool(np.all(self.cone_slack(d) >= -tol))

    def scalarize(self, w, u, p) -> tuple[float, Optional[np.ndarray]]:
        w = np.asarray(w, float)
        if not self.in_dual_cone(w):
            return -np.inf, None
        q = self.cvar_vector(u, p)
        return float(w @ q), q

    def entry_alpha(self, u, p, v) -> float:
        q = self.cvar_vector(u, p)
        S = self.dual_generators
        return float(np.max(S @ (q - np.asarray(v, float)) / S.sum(axis=1)))

    def penalty_beta(self, mu, w, p, tol: float = 1e-12) -> float:
        mu, p = _check_u(mu, p)
        if not self.in_dual_cone(w):
            return np.inf
        if np.any(mu < -tol) or np.any(np.abs(mu.sum(axis=1) - 1.0) > 1e-9):
            return np.inf
        bound = p[None, :] / (1.0 - self.nu[:, None])
        return 0.0 if np.all(mu <= bound * (1 + tol) + tol) else np.inf

    def penalty_beta_tilde(self, m, p, tol: float = 1e-12) -> float:
        m, p = _check_u(m, p)
        if np.any(m < -tol):
            return np.inf
        mass = m.sum(axis=1)
        if not self.in_dual_cone(mass):
            return np.inf
        bound = p[None, :] * mass[:, None] / (1.0 - self.nu[:, None])
        return 0.0 if np.all(m <= bound * (1 + tol) + tol) else np.inf

    def beta_tilde_subgradient(self, m, p):
        raise ValueError("CVaR penalties are indicator functions: use domain constraints instead")

    def to_dict(self) -> dict:
        return {"kind": "cvar", "nu": [repr(float(v)) for v in self.nu],
                "cone_generators": [[repr(float(v)) for v in g] for g in self._cone_rays]}

    def __repr__(self) -> str:
        return f"CVaR(nu={self.nu.tolist()}, orthant={self.is_orthant})"


# --------------------------------------------------------------------------
# Entropic
# --------------------------------------------------------------------------


class Entropic(RiskMeasure):
    """Multivariate entropic risk ``R(u) = {z : E[U(u - z)] in C}``."""

    kind = "entropic"

    def __init__(self, delta, cone: Optional[Cone] = None):
        delta = np.asarray(delta, float).ravel()
        if np.any(delta <= 0):
            raise ValueError("risk aversion parameters must be positive")
        super().__init__(delta.size, cone)
        self.delta = delta
        # C+ described by inequalities c @ s >= 0; unit rows are redundant but
        # let zero-weight coordinates reach the boundary s^j = 0.
        rows = np.vstack([self._cone_rays, np.eye(self.J)])
        self._dual_rows = rows[np.unique(np.round(rows, 12), axis=0, return_index=True)[1]]

    # ---- basic quantities -----------------------------------------------------

    def log_mgf(self, u, p) -> np.ndarray:
        """``log E[exp(delta^j u^j)]`` for every objective."""
        u, p = _check_u(u, p)
        with np.errstate(divide="ignore"):
            logp = np.log(p)
        return logsumexp(self.delta[:, None] * u + logp[None, :], axis=1)

    def component_risk(self, u, p) -> np.ndarray:
        """Univariate entropic risks ``(1/delta^j) log E exp(delta^j u^j)``."""
        return self.log_mgf(u, p) / self.delta

    def expected_utility(self, u, p, z) -> np.ndarray:
        """``E[U^j(u^j - z^j)]`` for every objective."""
        lm = self.log_mgf(u, p) - self.delta * np.asarray(z, float)
        return -np.expm1(lm) / self.delta

    def membership(self, u, p, z, tol: float = _MEMBER_TOL) -> bool:
        return bool(np.all(self.cone_slack(self.expected_utility(u, p, z)) >= -tol))

    # ---- inner infimum over the dual cone --------------------------------------

    def inner_inf(self, w) -> tuple[float, np.ndarray]:
        """``min_{s in C+} sum_j (s^j - w^j log s^j) / delta^j`` and a minimizer."""
        w = np.asarray(w, float)
        # the separable objective is minimized at s = w when w itself lies in C+
        if self.is_orthant or np.all(self._dual_rows @ w >= 0):
            s = w.copy()
            return float(np.sum((s - _xlogy(w, s)) / self.delta)), s
        return _inner_inf_active_set(w, self.delta, self._dual_rows)

    def inner_objective(self, s, w) -> float:
        s = np.asarray(s, float)
        w = np.asarray(w, float)
        if np.any((w > 0) & (s <= 0)):
            return np.inf
        return float(np.sum((s - _xlogy(w, s)) / self.delta))

    # ---- scalarization ---------------------------------------------------------

    def scalarize(self, w, u, p) -> tuple[float, Optional[np.ndarray]]:
        w = np.asarray(w, float)
        kappa = self.component_risk(u, p)
        inf_val, s = self.inner_inf(w)
        value = float(w @ kappa + np.sum((w - _xlogy(w, w)) / self.delta) - inf_val)
        z = kappa + self.attaining_shift(w, s)
        alpha = self.entry_alpha(u, p, z)
        if alpha > 0:
            z = z + alpha
        return value, z

    def attaining_shift(self, w, s) -> np.ndarray:
        """Shift ``t = z - kappa`` of a minimizer of ``w @ z`` over ``R(u)``.

        For ``w^j > 0`` the stationarity condition gives
        ``t^j = log(s^j / w^j) / delta^j``. Coordinates with zero weight are
        pushed down one at a time to the smallest feasible value; if the
        infimum is not attained they are placed where the utility is within
        ``exp(-40)`` of its supremum.
        """
        w = np.asarray(w, float)
        J = self.J
        t = np.full(J, np.inf)
        pos = w > 0
        t[pos] = np.log(s[pos] / w[pos]) / self.delta[pos]
        for j in np.flatnonzero(~pos):
            t[j] = self._min_feasible_shift(t, j)
        return t

    def _utility_of_shift(self, t) -> np.ndarray:
        # a^j(t^j) = (1 - exp(-delta t)) / delta, with a(+inf) = 1/delta
        with np.errstate(over="ignore"):
            return np.where(np.isinf(t), 1.0 / self.delta, -np.expm1(-self.delta * t) / self.delta)

    def _min_feasible_shift(self, t, j) -> float:
        def ok(val):
            tt = t.copy()
            tt[j] = val
            return bool(np.all(self.cone_slack(self._utility_of_shift(tt)) >= 0))

        # when the infimum is not attained the coordinate saturates; stop at a
        # shift whose utility differs from the limit by exp(-40)
        cap = 40.0 / self.delta[j]
        hi = 1.0
        while not ok(hi):
            hi *= 2.0
            if hi > cap:
                return cap
        lo = hi - 1.0
        step = 1.0
        while ok(lo):
            hi = lo
            step *= 2.0
            lo = hi - step
        while hi - lo > 1e-12 * max(1.0, abs(hi)):
            mid = 0.5 * (lo + hi)
            if ok(mid):
                hi = mid
            else:
                lo = mid
        return hi

    def entry_alpha(self, u, p, v) -> float:
        v = np.asarray(v, float)
        if self.is_orthant:
            return float(np.max(self.component_risk(u, p) - v))
        return entry_alpha_bisect(self, u, p, v)

    # ---- penalties -------------------------------------------------------------

    def penalty_beta(self, mu, w, p) -> float:
        mu, p = _check_u(mu, p)
        w = np.asarray(w, float)
        if np.any(mu < 0) or np.any(np.abs(mu.sum(axis=1) - 1.0) > 1e-9):
            return np.inf
        H = _xlogy(mu, mu / p[None, :]).sum(axis=1)
        inf_val, _ = self.inner_inf(w)
        return float(np.sum(w * (H - 1.0) / self.delta + _xlogy(w, w) / self.delta) + inf_val)

    def penalty_beta_tilde(self, m, p) -> float:
        m, p = _check_u(m, p)
        if np.any(m < 0):
            return np.inf
        mass = m.sum(axis=1)
        H = _xlogy(m, m / p[None, :]).sum(axis=1)
        inf_val, _ = self.inner_inf(mass)
        return float(np.sum((H - mass) / self.delta) + inf_val)

    def beta_tilde_subgradient(self, m, p) -> np.ndarray:
        """Gradient of ``-beta_tilde`` at a strictly positive ``m`` (shape ``(J, I)``)."""
        m, p = _check_u(m, p)
        if np.any(m <= 0):
            raise ValueError("m has zero components; clamp m >= 1e-12 before differentiating")
        _, s = self.inner_inf(m.sum(axis=1))
        return -np.log(m / (p[None, :] * s[:, None])) / self.delta[:, None]

    def beta_subgradient(self, mu, w, p) -> np.ndarray:
        """Gradient of ``-beta(., w)`` with respect to a strictly positive ``mu``."""
        mu, p = _check_u(mu, p)
        w = np.asarray(w, float)
        if np.any(mu <= 0):
            raise ValueError("mu has zero components; clamp before differentiating")
        return -(w / self.delta)[:, None] * (np.log(mu / p[None, :]) + 1.0)

    def to_dict(self) -> dict:
        return {"kind": "entropic", "delta": [repr(float(v)) for v in self.delta],
                "cone_generators": [[repr(float(v)) for v in g] for g in self._cone_rays]}

    def __repr__(self) -> str:
        return f"Entropic(delta={self.delta.tolist()}, orthant={self.is_orthant})"


def _inner_inf_active_set(w: np.ndarray, delta: np.ndarray, rows: np.ndarray) -> tuple[float, np.ndarray]:
    """Minimize ``h(s) = sum (s - w log s)/delta`` over ``{s : rows @ s >= 0}``.

    The feasible cone is small (``J <= 3``), so every candidate active set is
    enumerated; on each face the problem is solved by a damped Newton method
    and the KKT conditions select the minimizer.
    """
    J = w.size
    need = w > 0

    def h(s):
        if np.any(s[need] <= 0):
            return np.inf
        return float(np.sum((s - _xlogy(w, s)) / delta))

    best_val, best_s = np.inf, None
    kkt_val, kkt_s = np.inf, None
    for size in range(0, J + 1):
        for S in itertools.combinations(range(rows.shape[0]), size):
            N = rows[list(S)]
            if size and np.linalg.matrix_rank(N) < size:
                continue
            if size == J:
                Z = np.zeros((J, 0))
            elif size:
                _, _, Vt = np.linalg.svd(N)
                Z = Vt[size:].T
            else:
                Z = np.eye(J)
            s = _face_newton(w, delta, Z, need)
            if s is None:
                continue
            if np.any(rows @ s < -1e-10 * max(1.0, np.abs(s).max())):
                continue
            val = h(s)
            if not np.isfinite(val):
                continue
            grad = np.where(need, (1.0 - w / np.where(need, s, 1.0)), 1.0) / delta
            if size:
                pi, *_ = np.linalg.lstsq(N.T, grad, rcond=None)
                resid = np.abs(N.T @ pi - grad).max()
                is_kkt = resid < 1e-7 * max(1.0, np.abs(grad).max()) and np.all(pi >= -1e-9)
            else:
                is_kkt = np.abs(grad).max() < 1e-9
            if val < best_val:
                best_val, best_s = val, s
            if is_kkt and val < kkt_val:
                kkt_val, kkt_s = val, s
    if kkt_s is not None:
        return kkt_val, kkt_s
    if best_s is None:
        raise ValueError("inner infimum is unbounded or infeasible for this weight")
    logger.debug("inner infimum: no exact KKT point found, using best candidate")
    return best_val, best_s


def _face_newton(w, delta, Z, need, max_iter: int = 200) -> Optional[np.ndarray]:
    """Minimize ``h(Z y)`` over ``y`` keeping ``(Z y)^j > 0`` where ``w^j > 0``."""
    J, k = Z.shape
    if k == 0:
        return np.zeros(J) if not need.any() else None
    # strictly interior start for the required coordinates
    if need.any():
        A_ub = -Z[need]
        res = linprog(np.r_[np.zeros(k), -1.0], A_ub=np.hstack([A_ub, np.ones((need.sum(), 1))]),
                      b_ub=np.zeros(need.sum()), bounds=[(-1, 1)] * k + [(None, 1.0)], method="highs")
        if res.status != 0 or -res.fun <= 1e-12:
            return None
        y = res.x[:k]
    else:
        y = np.zeros(k)

    def h(y):
        s = Z @ y
        if np.any(s[need] <= 0):
            return np.inf
        return float(np.sum((s - _xlogy(w, s)) / delta))

    fy = h(y)
    for _ in range(max_iter):
        s = Z @ y
        safe = np.where(need, s, 1.0)
        g = Z.T @ (np.where(need, 1.0 - w / safe, 1.0) / delta)
        Hd = np.where(need, w / safe ** 2, 0.0) / delta
        H = Z.T @ (Hd[:, None] * Z)
        if np.abs(g).max() < 1e-14 * max(1.0, np.abs(y).max()):
            break
        try:
            step = -np.linalg.solve(H + 1e-14 * np.eye(k), g)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(step)) or np.abs(step).max() > 1e8:
            return None
        t = 1.0
        while t > 1e-16:
            fn = h(y + t * step)
            if fn <= fy + 1e-4 * t * (g @ step):
                break
            t *= 0.5
        else:
            break
        y = y + t * step
        if abs(fy - fn) <= 1e-16 * max(1.0, abs(fy)) and t == 1.0:
            fy = fn
            break
        fy = fn
        if np.abs(y).max() > 1e8:
            return None
    return Z @ y


def make_risk(kind: str, params, cone_generators=None, dual_cone_generators=None) -> RiskMeasure:
    """Build a risk measure from configuration values."""
    J = len(params)
    if cone_generators is not None and dual_cone_generators is not None:
        raise ValueError("give the ordering cone either by generators or by dual generators")
    if cone_generators is not None:
        cone = Cone(np.asarray(cone_generators, float))
    elif dual_cone_generators is not None:
        cone = Cone.from_dual_generators(np.asarray(dual_cone_generators, float))
    else:
        cone = Cone.orthant(J)
    kind = kind.lower()
    if kind == "cvar":
        return CVaR(params, cone)
    if kind == "entropic":
        return Entropic(params, cone)
    raise ValueError(f"unknown risk measure kind {kind!r}")


# functional aliases ----------------------------------------------------------

def cvar_vector(R: CVaR, u, p) -> np.ndarray:
    return R.cvar_vector(u, p)


def membership(R: RiskMeasure, u, p, z) -> bool:
    return R.membership(u, p, z)


def penalty_beta(R: RiskMeasure, mu, w, p) -> float:
    return R.penalty_beta(mu, w, p)


def penalty_beta_tilde(R: RiskMeasure, m, p) -> float:
    return R.penalty_beta_tilde(m, p)


def beta_tilde_subgradient(R: RiskMeasure, m, p) -> np.ndarray:
    return R.beta_tilde_subgradient(m, p)


def scalarize_phi(R: RiskMeasure, w, u, p) -> tuple[float, Optional[np.ndarray]]:
    return R.scalarize(w, u, p)


def entry_alpha(R: RiskMeasure, u, p, v) -> float:
    return R.entry_alpha(u, p, v)


__all__ = ["RiskMeasure", "CVaR", "Entropic", "cvar", "cvar_rockafellar_uryasev", "make_risk",
           "cvar_vector", "membership", "penalty_beta", "penalty_beta_tilde",
           "beta_tilde_subgradient", "scalarize_phi", "entry_alpha", "entry_alpha_bisect"]
