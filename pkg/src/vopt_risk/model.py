"""Two-stage stochastic program data, validation, instance generation and persistence.

A problem has first-stage decisions ``x`` (``M`` entries) with ``A x = b``,
``x >= 0`` and, for every scenario ``i``, recourse decisions ``y_i``
(``N`` entries) with ``T_i x + W_i y_i = h_i``, ``y_i >= 0``. The random cost
vector in scenario ``i`` is ``C x + Q_i y_i`` (``J`` entries).
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .opt_kernel import LinearProgram, solve_lp

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def _frozen(a, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    if ndim == 2:
        arr = np.atleast_2d(arr)
    else:
        arr = np.atleast_1d(arr).ravel()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Scenario:
    """One realization ``(p, T, W, h, Q)`` of the random data."""

    probability: float
    T: np.ndarray
    W: np.ndarray
    h: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probability", float(self.probability))
        for name, nd in (("T", 2), ("W", 2), ("h", 1), ("Q", 2)):
            object.__setattr__(self, name, _frozen(getattr(self, name), nd))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scenario):
            return NotImplemented
        return self.probability == other.probability and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in "TWhQ")

    __hash__ = None


@dataclass(frozen=True, eq=False)
class TwoStageProblem:
    """Data of a two-stage stochastic program with vector-valued cost.

    Construction only normalizes arrays; consistency is checked by
    :func:`validate`.
    """

    A: np.ndarray
    b: np.ndarray
    C: np.ndarray
    scenarios: tuple

    def __post_init__(self):
        object.__setattr__(self, "A", _frozen(self.A, 2))
        object.__setattr__(self, "b", _frozen(self.b, 1))
        object.__setattr__(self, "C", _frozen(self.C, 2))
        object.__setattr__(self, "scenarios", tuple(self.scenarios))

    # dimensions ---------------------------------------------------------------
    @property
    def J(self) -> int:
        return self.C.shape[0]

    @property
    def K(self) -> int:
        return self.A.shape[0]

    @property
    def M(self) -> int:
        return self.A.shape[1]

    @property
    def L(self) -> int:
        return self.scenarios[0].T.shape[0]

    @property
    def N(self) -> int:
        return self.scenarios[0].W.shape[1]

    @property
    def I(self) -> int:  # noqa: E743
        return len(self.scenarios)

    @property
    def p(self) -> np.ndarray:
        return np.array([s.probability for s in self.scenarios])

    def dims(self) -> dict:
        return {"J": self.J, "K": self.K, "L": self.L, "M": self.M, "N": self.N, "I": self.I}

    # stacked views ------------------------------------------------------------
    @property
    def Q_stack(self) -> np.ndarray:
        """Cost matrices as an array of shape ``(I, J, N)``."""
        return np.stack([s.Q for s in self.scenarios])

    def costs(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Cost realizations ``C x + Q_i y_i`` as a ``(J, I)`` array.

        ``x`` is either one first-stage vector or an ``(I, M)`` array of
        scenario copies; ``y`` has shape ``(I, N)``.
        """
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        Cx = (x @ self.C.T) if x.ndim == 2 else np.broadcast_to(self.C @ x, (self.I, self.J))
        Qy = np.einsum("ijn,in->ij", self.Q_stack, y)
        return (Cx + Qy).T

    def cached(self, key: str, compute):
        """Memoize a derived quantity on this (immutable) problem."""
        store = self.__dict__.setdefault("_derived", {})
        if key not in store:
            store[key] = compute()
        return store[key]

    def __eq__(self, other) -> bool:
        if not isinstance(other, TwoStageProblem):
            return NotImplemented
        return (np.array_equal(self.A, other.A) and np.array_equal(self.b, other.b)
                and np.array_equal(self.C, other.C) and self.scenarios == other.scenarios)

    __hash__ = None


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    scenario: Optional[int] = None


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def messages(self) -> list[str]:
        return [v.message for v in self.violations]

    def __str__(self) -> str:
        return "valid" if self.ok else "; ".join(self.messages())


def _dimension_violations(problem: TwoStageProblem) -> list[Violation]:
    out = []
    J, K, M = problem.J, problem.K, problem.M
    if problem.b.size != K:
        out.append(Violation("dimension", f"b has {problem.b.size} entries, expected {K}"))
    if problem.C.shape[1] != M:
        out.append(Violation("dimension", f"C has {problem.C.shape[1]} columns, expected {M}"))
    if not problem.scenarios:
        out.append(Violation("scenario_count", "I >= 2 required, got 0"))
        return out
    L, N = problem.L, problem.N
    for i, s in enumerate(problem.scenarios):
        for name, shape in (("T", (L, M)), ("W", (L, N)), ("Q", (J, N))):
            if getattr(s, name).shape != shape:
                out.append(Violation("dimension", f"scenario {i + 1}: {name} has shape "
                                     f"{getattr(s, name).shape}, expected {shape}", i))
        if s.h.size != L:
            out.append(Violation("dimension", f"scenario {i + 1}: h has {s.h.size} entries, expected {L}", i))
    return out


def validate(problem: TwoStageProblem) -> ValidationReport:
    """Check dimensions, probabilities and nonemptiness/boundedness of every ``F_i``.

    Boundedness is decided by minimizing and maximizing each coordinate of
    ``(x, y_i)`` over ``F_i``; an unbounded LP status flags the scenario.
    """
    rep = ValidationReport(_dimension_violations(problem))
    if rep.violations:
        return rep
    if problem.I < 2:
        rep.violations.append(Violation("scenario_count", f"I >= 2 required, got {problem.I}"))
    p = problem.p
    for i in np.flatnonzero(p <= 0):
        rep.violations.append(Violation("probability", f"scenario {i + 1}: probability {p[i]:g} <= 0", int(i)))
    total = float(p.sum())
    if abs(total - 1.0) > 1e-12:
        rep.violations.append(Violation("probability_sum", f"probability sum {total:.12g} != 1"))
    n = problem.M + problem.N
    for i in range(problem.I):
        for k in range(n):
            for sgn in (1.0, -1.0):
                obj = np.zeros(n)
                obj[k] = sgn
                sol = solve_lp(build_scenario_lp(problem, i, obj))
                if sol.status == "infeasible":
                    rep.violations.append(Violation("empty", f"F_{i + 1} empty", i))
                    break
                if sol.status == "unbounded":
                    rep.violations.append(Violation("unbounded", f"F_{i + 1} unbounded in coordinate {k + 1}", i))
                    break
                if sol.status != "optimal":
                    rep.violations.append(Violation("solver", f"F_{i + 1}: LP status {sol.status}", i))
                    break
            else:
                continue
            break
    return rep


def build_scenario_lp(problem: TwoStageProblem, i: int, objective) -> LinearProgram:
    """LP ``min obj @ (x, y)`` over ``F_i = {A x = b, T_i x + W_i y = h_i, x, y >= 0}``."""
    if not 0 <= i < problem.I:
        raise IndexError(f"scenario index {i} out of range 0..{problem.I - 1}")
    s = problem.scenarios[i]
    obj = np.asarray(objective, float).ravel()
    if obj.size != problem.M + problem.N:
        raise ValueError("objective must have M + N entries")
    E = np.block([[problem.A, np.zeros((problem.K, problem.N))], [s.T, s.W]])
    e = np.concatenate([problem.b, s.h])
    return LinearProgram(obj, E, e)


def extensive_constraints(problem: TwoStageProblem) -> tuple[sp.csr_matrix, np.ndarray]:
    """Sparse equality rows of the extensive form over ``(x, y_1, ..., y_I)``."""
    M, N, L, I = problem.M, problem.N, problem.L, problem.I
    blocks = [[sp.csr_matrix(problem.A)] + [None] * I]
    for i, s in enumerate(problem.scenarios):
        row = [sp.csr_matrix(s.T)] + [None] * I
        row[1 + i] = sp.csr_matrix(s.W)
        blocks.append(row)
    # bmat needs a shape hint for empty columns
    for i in range(I):
        if all(blocks[r][1 + i] is None for r in range(len(blocks))):
            blocks[0][1 + i] = sp.csr_matrix((problem.K, N))
    E = sp.bmat(blocks, format="csr")
    e = np.concatenate([problem.b] + [s.h for s in problem.scenarios])
    assert E.shape == (problem.K + I * L, M + I * N)
    return E, e


def scenario_vertices(problem: TwoStageProblem, i: int, limit: int = 50000) -> Optional[np.ndarray]:
    """All vertices of the (bounded) scenario polytope ``F_i`` as rows ``(x, y)``.

    Every choice of basic columns is tried at once; returns ``None`` when the
    number of candidate bases exceeds ``limit``.
    """
    from itertools import combinations
    from math import comb

    s = problem.scenarios[i]
    E = np.block([[problem.A, np.zeros((problem.K, problem.N))], [s.T, s.W]])
    e = np.concatenate([problem.b, s.h])
    n = E.shape[1]
    rank = np.linalg.matrix_rank(E)
    if rank < E.shape[0]:
        # keep an independent subset of rows; the others must be consistent
        from scipy.linalg import qr
        _, _, piv = qr(E.T, pivoting=True, mode="economic")
        keep = np.sort(piv[:rank])
        sol, *_ = np.linalg.lstsq(E[keep], e[keep], rcond=None)
        if np.abs(E @ sol - e).max() > 1e-9 * max(1.0, np.abs(e).max()):
            return np.zeros((0, n))
        E, e = E[keep], e[keep]
    if rank == 0:
        return np.zeros((1, n)) if np.allclose(e, 0) else np.zeros((0, n))
    if comb(n, rank) > limit:
        return None
    cols = np.array(list(combinations(range(n), rank)))
    B = np.transpose(E[:, cols], (1, 0, 2))
    det = np.linalg.det(B)
    scale = np.abs(E).max() ** rank
    good = np.abs(det) > 1e-10 * scale
    cols, B = cols[good], B[good]
    xB = np.linalg.solve(B, np.broadcast_to(e, (B.shape[0], rank))[..., None])[..., 0]
    feas = np.all(xB >= -1e-9, axis=1)
    V = np.zeros((int(feas.sum()), n))
    rows = np.arange(V.shape[0])[:, None]
    V[rows, cols[feas]] = np.maximum(xB[feas], 0.0)
    V[np.abs(V) < 1e-14] = 0.0
    if V.shape[0] == 0:
        return V
    _, idx = np.unique(np.round(V, 9), axis=0, return_index=True)
    return V[np.sort(idx)]


def all_scenario_vertices(problem: TwoStageProblem, limit: int = 50000) -> Optional[list]:
    """Vertices of every scenario polytope (cached), or ``None`` if enumeration is too costly."""
    def compute():
        out = []
        for i in range(problem.I):
            V = scenario_vertices(problem, i, limit)
            if V is None:
                return None
            out.append(V)
        return out
    return problem.cached(f"vertices:{limit}", compute)


def cost_bounds(problem: TwoStageProblem) -> tuple[np.ndarray, np.ndarray]:
    """Componentwise min and max of ``C x + Q_i y`` over ``F_i``, as ``(J, I)`` arrays."""
    def compute():
        lo = np.empty((problem.J, problem.I))
        hi = np.empty((problem.J, problem.I))
        verts = all_scenario_vertices(problem)
        for i, s in enumerate(problem.scenarios):
            D = np.hstack([problem.C, s.Q])
            if verts is not None and verts[i].shape[0]:
                U = verts[i] @ D.T
                lo[:, i], hi[:, i] = U.min(axis=0), U.max(axis=0)
                continue
            for j in range(problem.J):
                lo[j, i] = solve_lp(build_scenario_lp(problem, i, D[j])).value
                hi[j, i] = -solve_lp(build_scenario_lp(problem, i, -D[j])).value
        return lo, hi
    return problem.cached("cost_bounds", compute)


# --------------------------------------------------------------------------
# Reference instance and portfolio generator
# --------------------------------------------------------------------------


def tiny1(probabilities: Sequence[float] = (0.5, 0.5), A=((1.0,),), b=(1.0,)) -> TwoStageProblem:
    """Two-scenario reference instance forcing ``x = y_i = 1``.

    Cost realizations are ``(1, 3)`` and ``(3, 1)``.
    """
    scen = [Scenario(probabilities[0], [[1.0]], [[-1.0]], [0.0], [[1.0], [3.0]]),
            Scenario(probabilities[1], [[1.0]], [[-1.0]], [0.0], [[3.0], [1.0]])]
    return TwoStageProblem(A, b, np.zeros((2, 1)), scen)


_DEFAULT_RETURNS = ((-0.1, 0.2), (-0.05, 0.1), (-0.15, 0.3))
_DEFAULT_TRANSACTION = {
    (0, 1): (1.0, 1.1), (1, 0): (0.9, 1.0),
    (0, 2): (0.9, 1.0), (2, 0): (1.0, 1.1),
    (1, 2): (0.8, 1.0), (2, 1): (1.0, 1.2),
}
_DEFAULT_THETA_ROW = (1.0, 1.0815, 0.9094)


@dataclass(frozen=True)
class PortfolioSpec:
    """Parameters of the portfolio instance generator.

    Attributes
    ----------
    J : int
        Number of assets (2 or 3).
    I : int
        Number of sampled scenarios (uniform probabilities).
    capital : float
        Initial capital ``c``.
    theta : ndarray, optional
        ``J x J`` first-stage exchange costs; only the first row enters the
        budget constraint. Defaults to consistent rates derived from the first
        row ``(1, 1.0815, 0.9094)``.
    returns : sequence of (low, high), optional
        Uniform return ranges per asset.
    transaction : dict, optional
        Uniform transaction-cost ranges per ordered asset pair ``(j, k)``,
        ``j != k``; diagonal costs are 1.
    rng_seed : int
        Seed of the generator.
    """

    J: int = 2
    I: int = 100  # noqa: E741
    capital: float = 1.0
    theta: Optional[np.ndarray] = None
    returns: Optional[tuple] = None
    transaction: Optional[dict] = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.J not in (2, 3):
            raise ValueError("the generator supports J in {2, 3}")
        if self.I < 2:
            raise ValueError("I >= 2 required")
        if self.capital <= 0:
            raise ValueError("capital must be positive")
        J = self.J
        if self.theta is None:
            row = np.array(_DEFAULT_THETA_ROW[:J])
            theta = row[None, :] / row[:, None]
        else:
            theta = np.array(self.theta, float)
        if theta.shape != (J, J) or np.any(theta <= 0):
            raise ValueError("theta must be a positive J x J matrix")
        rets = tuple(tuple(map(float, r)) for r in (self.returns or _DEFAULT_RETURNS[:J]))
        trans = {k: tuple(map(float, v)) for k, v in (self.transaction or
                 {k: v for k, v in _DEFAULT_TRANSACTION.items() if max(k) < J}).items()}
        if len(rets) != J or set(trans) != {(j, k) for j in range(J) for k in range(J) if j != k}:
            raise ValueError("return and transaction ranges must cover every asset / ordered pair")
        for lo, hi in list(rets) + list(trans.values()):
            if not lo < hi:
                raise ValueError("every range needs lower bound < upper bound")
        if any(lo <= 0 for lo, _ in trans.values()):
            raise ValueError("transaction costs must be positive")
        if any(lo <= -1 for lo, _ in rets):
            raise ValueError("returns must exceed -1")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "returns", rets)
        object.__setattr__(self, "transaction", trans)


def _stream(seed: int, field_id: int) -> np.random.Generator:
    """Independent PCG64 stream for one random field, derived from the seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(field_id,))))


def generate_portfolio(spec: PortfolioSpec) -> TwoStageProblem:
    """Build the portfolio problem with transaction costs.

    First stage: ``x^j`` is the amount held in asset ``j`` after the initial
    purchase, with budget ``sum_j theta^{1j} x^j = c``. Second stage (per
    scenario) variables are ``q^{jk}`` (amount of asset ``j`` converted into
    asset ``k``, row-major ``J x J``) followed by the final holdings ``y``.
    Rows are ``(1 + r^j) x^j = sum_k pi^{jk} q^{jk}`` and
    ``y^j = sum_k q^{kj}``. The cost vector is ``-y``.

    Random fields use separate PCG64 streams: stream ``j`` draws the returns of
    asset ``j`` and stream ``10 + J*j + k`` the transaction costs of pair
    ``(j, k)``.
    """
    J, I = spec.J, spec.I
    nq = J * J
    N = nq + J
    r = np.empty((I, J))
    for j in range(J):
        lo, hi = spec.returns[j]
        r[:, j] = _stream(spec.rng_seed, j).uniform(lo, hi, size=I)
    pi = np.ones((I, J, J))
    for (j, k), (lo, hi) in sorted(spec.transaction.items()):
        pi[:, j, k] = _stream(spec.rng_seed, 10 + J * j + k).uniform(lo, hi, size=I)
    A = spec.theta[0][None, :].copy()
    b = np.array([spec.capital])
    Q = np.zeros((J, N))
    Q[:, nq:] = -np.eye(J)
    p = 1.0 / I
    scenarios = []
    for i in range(I):
        T = np.zeros((2 * J, J))
        W = np.zeros((2 * J, N))
        for j in range(J):
            T[j, j] = 1.0 + r[i, j]
            for k in range(J):
                W[j, j * J + k] = -pi[i, j, k]
            W[J + j, nq + j] = 1.0
            for k in range(J):
                W[J + j, k * J + j] = -1.0
        scenarios.append(Scenario(p, T, W, np.zeros(2 * J), Q))
    return TwoStageProblem(A, b, np.zeros((J, J)), scenarios)


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------


def _enc(a) -> list:
    a = np.asarray(a, float)
    if a.ndim == 0:
        return repr(float(a))
    return [_enc(v) for v in a]


def _dec(a, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=object)
    out = np.vectorize(float, otypes=[float])(arr) if arr.size else np.zeros(arr.shape)
    if ndim == 2 and out.ndim == 1:
        out = out.reshape(-1, 0) if out.size == 0 else out[None, :]
    return out


def problem_to_dict(problem: TwoStageProblem) -> dict:
    return {
        "version": FORMAT_VERSION,
        "dims": problem.dims(),
        "A": _enc(problem.A),
        "b": _enc(problem.b),
        "C": _enc(problem.C),
        "scenarios": [{"p": repr(s.probability), "T": _enc(s.T), "W": _enc(s.W), "h": _enc(s.h),
                       "Q": _enc(s.Q)} for s in problem.scenarios],
    }


def problem_from_dict(data: dict) -> TwoStageProblem:
    if not isinstance(data, dict):
        raise ValueError("malformed instance: top level must be an object")
    allowed = {"version", "dims", "A", "b", "C", "scenarios", "risk"}
    extra = set(data) - allowed
    if extra:
        raise ValueError(f"malformed instance: unknown keys {sorted(extra)}")
    if data.get("version") != FORMAT_VERSION:
        raise ValueError(f"version mismatch: expected {FORMAT_VERSION}, got {data.get('version')!r}")
    try:
        dims = data["dims"]
        scen = data["scenarios"]
        if len(scen) < 2:
            raise ValueError("I ≥ 2 required")
        scenarios = [Scenario(float(s["p"]), _dec(s["T"], 2), _dec(s["W"], 2), _dec(s["h"], 1),
                              _dec(s["Q"], 2)) for s in scen]
        prob = TwoStageProblem(_dec(data["A"], 2), _dec(data["b"], 1), _dec(data["C"], 2), scenarios)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed instance: {exc}") from exc
    if dims.get("I") != prob.I:
        raise ValueError("malformed instance: dims.I does not match the scenario count")
    for key in ("J", "K", "M"):
        if dims.get(key) != getattr(prob, key):
            raise ValueError(f"malformed instance: dims.{key} does not match the data")
    return prob


def save_problem(problem: TwoStageProblem, path, risk: Optional[dict] = None) -> None:
    data = problem_to_dict(problem)
    if risk is not None:
        data["risk"] = risk
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1)


def load_problem(path) -> TwoStageProblem:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed instance file: {exc}") from exc
    return problem_from_dict(data)


def io_roundtrip(problem: TwoStageProblem) -> TwoStageProblem:
    """Serialize to the instance format and parse it back."""
    return problem_from_dict(json.loads(json.dumps(problem_to_dict(problem))))


def instance_hash(problem: TwoStageProblem) -> str:
    blob = json.dumps(problem_to_dict(problem), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


__all__ = ["Scenario", "TwoStageProblem", "Violation", "ValidationReport", "validate",
           "build_scenario_lp", "extensive_constraints", "scenario_vertices",
           "all_scenario_vertices", "cost_bounds", "tiny1", "PortfolioSpec",
           "generate_portfolio", "problem_to_dict", "problem_from_dict", "save_problem",
           "load_problem", "io_roundtrip", "instance_hash", "FORMAT_VERSION"]
