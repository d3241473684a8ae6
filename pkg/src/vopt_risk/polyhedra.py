"""Convex polyhedra in low dimension with a double description method.

A :class:`Polyhedron` is stored by inequalities ``A @ z >= b``. Its generators
(points, extreme rays and lineality directions) are computed lazily with the
double description (Motzkin) method applied to the homogenized cone
``{(z, t) : A z - b t >= 0, t >= 0}``. Adding one halfspace to a pointed
polyhedron reuses the cached generators and costs a single DD step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.linalg import null_space, qr

from .opt_kernel.config import DEFAULT_TOLERANCES

logger = logging.getLogger(__name__)

_TOL = DEFAULT_TOLERANCES.vertex


def _normalize_rows(A: np.ndarray) -> np.ndarray:
    scale = np.abs(A).max(axis=1, keepdims=True)
    scale[scale == 0] = 1.0
    return A / scale


def _normalize_rays(R: np.ndarray) -> np.ndarray:
    if R.size == 0:
        return R
    scale = np.abs(R).max(axis=1, keepdims=True)
    return R / scale


def _dedupe(R: np.ndarray, tol: float) -> np.ndarray:
    if R.shape[0] <= 1:
        return R
    keep = []
    for k in range(R.shape[0]):
        if all(np.abs(R[k] - R[j]).max() > 10 * tol for j in keep):
            keep.append(k)
    return R[keep]


class _ConeDD:
    """Double description state of ``{x in R^d : A x >= 0}``.

    The lineality space is split off once; extreme rays of the pointed part are
    stored in coordinates of the orthogonal complement (``x = y @ basis``).
    """

    def __init__(self, A: np.ndarray, tol: float = _TOL):
        A = np.atleast_2d(np.asarray(A, float))
        d = A.shape[1]
        self.tol = tol
        self.d = d
        A = A[np.abs(A).max(axis=1) > 0] if A.shape[0] else A
        if A.shape[0] == 0:
            self.lines = np.eye(d)
            self.basis = np.zeros((0, d))
            self.rows = np.zeros((0, 0))
            self.Y = np.zeros((0, 0))
            return
        A = _normalize_rows(A)
        lines = null_space(A, rcond=1e-10)
        self.lines = lines.T
        if lines.shape[1]:
            self.basis = null_space(self.lines, rcond=1e-10).T
        else:
            self.basis = np.eye(d)
        r = self.basis.shape[0]
        At = A @ self.basis.T
        _, _, piv = qr(At.T, pivoting=True, mode="economic")
        start = piv[:r]
        self.rows = At[start]
        self.Y = _normalize_rays(np.linalg.inv(self.rows).T)
        for k in range(A.shape[0]):
            if k not in set(start.tolist()):
                self.add_row(At[k], reduced=True)

    @property
    def r(self) -> int:
        return self.basis.shape[0]

    def reduce(self, a: np.ndarray) -> Optional[np.ndarray]:
        """Coordinates of a new row in the reduced space, or None if it cuts the lineality."""
        if self.lines.shape[0] and np.abs(self.lines @ a).max() > self.tol * max(1.0, np.abs(a).max()):
            return None
        return a @ self.basis.T

    def add_row(self, a: np.ndarray, reduced: bool = False) -> None:
        if not reduced:
            a = self.reduce(a)
            if a is None:
                raise ValueError("row changes the lineality space")
        scale = np.abs(a).max()
        if scale == 0:
            return
        a = a / scale
        tol = self.tol
        Y = self.Y
        if Y.shape[0] == 0:
            self.rows = np.vstack([self.rows, a])
            return
        s = Y @ a
        pos = s > tol
        neg = s < -tol
        if not neg.any():
            self.rows = np.vstack([self.rows, a])
            return
        zero = ~pos & ~neg
        vals = np.abs(Y @ self.rows.T) <= tol
        new = []
        r = self.r
        P, N = np.flatnonzero(pos), np.flatnonzero(neg)
        for i in P:
            for j in N:
                common = vals[i] & vals[j]
                if common.sum() < r - 2:
                    continue
                if r > 2 and np.linalg.matrix_rank(self.rows[common], tol=1e-8) != r - 2:
                    continue
                new.append(s[i] * Y[j] - s[j] * Y[i])
        keep = Y[pos | zero]
        if new:
            keep = np.vstack([keep, _normalize_rays(np.array(new))])
        self.Y = _dedupe(keep, tol)
        self.rows = np.vstack([self.rows, a])

    def rays(self) -> np.ndarray:
        if self.Y.size == 0:
            return np.zeros((0, self.d))
        return _normalize_rays(self.Y @ self.basis)


def cone_generators(A: np.ndarray, tol: float = _TOL) -> tuple[np.ndarray, np.ndarray]:
    """Extreme rays and a lineality basis of ``{x : A x >= 0}``."""
    dd = _ConeDD(A, tol)
    return dd.rays(), dd.lines


class Polyhedron:
    """Polyhedron ``{z : A z >= b}`` with lazily computed generators.

    Instances are treated as immutable: :meth:`add_halfspace` returns a new
    polyhedron and never modifies the receiver.
    """

    def __init__(self, A, b, *, _dd: Optional[_ConeDD] = None):
        A = np.atleast_2d(np.asarray(A, float))
        b = np.asarray(b, float).ravel()
        if A.shape[0] != b.size:
            raise ValueError("A and b have inconsistent row counts")
        d = A.shape[1]
        scale = np.abs(A).max(axis=1) if A.shape[0] else np.zeros(0)
        if np.any(scale == 0):
            infeasible = bool(np.any(b[scale == 0] > 0))
            keep = scale > 0
            A, b, scale = A[keep], b[keep], scale[keep]
            if infeasible:
                # 0 >= positive: replace by a contradictory pair of halfspaces
                e = np.eye(d)[:1]
                A = np.vstack([A, e, -e])
                b = np.concatenate([b, [1.0, 0.0]])
                scale = np.concatenate([scale, [1.0, 1.0]])
        self._A = A / scale[:, None] if A.shape[0] else A
        self._b = b / scale if A.shape[0] else b
        self._A.setflags(write=False)
        self._b.setflags(write=False)
        self._dd = _dd
        self._gen = None

    # ---- construction -----------------------------------------------------------

    @classmethod
    def from_halfspaces(cls, halfspaces: Iterable[tuple[Sequence[float], float]], dim: int) -> "Polyhedron":
        hs = list(halfspaces)
        A = np.array([np.asarray(a, float) for a, _ in hs]).reshape(len(hs), dim)
        b = np.array([float(o) for _, o in hs])
        return cls(A, b)

    @classmethod
    def from_vrep(cls, points, rays=None, lines=None, tol: float = _TOL) -> "Polyhedron":
        """Polyhedron ``conv(points) + cone(rays) + span(lines)`` in H-representation."""
        P = np.atleast_2d(np.asarray(points, float))
        if P.size == 0:
            raise ValueError("at least one point is required")
        d = P.shape[1]
        R = np.zeros((0, d)) if rays is None else np.asarray(rays, float).reshape(-1, d)
        L = np.zeros((0, d)) if lines is None else np.asarray(lines, float).reshape(-1, d)
        rows = [np.hstack([P, -np.ones((P.shape[0], 1))]),
                np.hstack([R, np.zeros((R.shape[0], 1))]),
                np.hstack([L, np.zeros((L.shape[0], 1))]),
                np.hstack([-L, np.zeros((L.shape[0], 1))])]
        ext, lin = cone_generators(np.vstack(rows), tol)
        A, b = [], []
        for h in ext:
            if np.abs(h[:d]).max() > 1e-9:
                A.append(h[:d])
                b.append(h[d])
        for h in lin:
            if np.abs(h[:d]).max() > 1e-9:
                A.extend([h[:d], -h[:d]])
                b.extend([h[d], -h[d]])
        if not A:
            return cls(np.zeros((0, d)), np.zeros(0))
        return cls(np.array(A), np.array(b))

    # ---- data -------------------------------------------------------------------

    @property
    def A(self) -> np.ndarray:
        return self._A

    @property
    def b(self) -> np.ndarray:
        return self._b

    @property
    def dim(self) -> int:
        return self._A.shape[1]

    @property
    def n_halfspaces(self) -> int:
        return self._A.shape[0]

    def _homog(self) -> np.ndarray:
        d = self.dim
        rows = np.hstack([self._A, -self._b[:, None]])
        t_row = np.zeros((1, d + 1))
        t_row[0, d] = 1.0
        return np.vstack([t_row, rows])

    def _generators(self):
        if self._gen is None:
            if self._dd is None:
                self._dd = _ConeDD(self._homog())
            d = self.dim
            R = self._dd.rays()
            t = R[:, d] if R.size else np.zeros(0)
            pts = R[t > _TOL] / t[t > _TOL, None] if R.size else np.zeros((0, d + 1))
            rays = R[t <= _TOL] if R.size else np.zeros((0, d + 1))
            pts = pts[:, :d] if pts.size else np.zeros((0, d))
            rays = _normalize_rays(rays[:, :d]) if rays.size else np.zeros((0, d))
            lines = self._dd.lines[:, :d] if self._dd.lines.size else np.zeros((0, d))
            order = np.lexsort(pts.T[::-1]) if pts.shape[0] else np.zeros(0, int)
            self._gen = (pts[order], rays, lines)
        return self._gen

    @property
    def points(self) -> np.ndarray:
        """Minimal-face representatives (the vertices when the polyhedron is pointed)."""
        return self._generators()[0]

    @property
    def vertices(self) -> np.ndarray:
        """Vertices in lexicographic order (empty if the polyhedron has lines)."""
        pts, _, lines = self._generators()
        return pts if lines.shape[0] == 0 else np.zeros((0, self.dim))

    @property
    def rays(self) -> np.ndarray:
        return self._generators()[1]

    @property
    def lines(self) -> np.ndarray:
        return self._generators()[2]

    @property
    def is_empty(self) -> bool:
        return self.points.shape[0] == 0

    @property
    def is_bounded(self) -> bool:
        return self.rays.shape[0] == 0 and self.lines.shape[0] == 0

    # ---- operations -------------------------------------------------------------

    def add_halfspace(self, normal, offset: float) -> "Polyhedron":
        """Return ``self ∩ {z : normal @ z >= offset}``."""
        normal = np.asarray(normal, float).ravel()
        A = np.vstack([self._A, normal[None]])
        b = np.append(self._b, float(offset))
        dd = None
        if self._dd is not None and self._dd.lines.shape[0] == 0:
            scale = np.abs(normal).max()
            row = np.append(normal, -float(offset)) / (scale if scale > 0 else 1.0)
            dd = _ConeDD.__new__(_ConeDD)
            dd.__dict__.update(self._dd.__dict__)
            dd.add_row(row)
        return Polyhedron(A, b, _dd=dd)

    def intersect(self, other: "Polyhedron") -> "Polyhedron":
        return Polyhedron(np.vstack([self._A, other.A]), np.concatenate([self._b, other.b]))

    def slack(self, z) -> np.ndarray:
        """Constraint slacks ``A z - b`` (rows) for one point or a stack of points."""
        Z = np.atleast_2d(np.asarray(z, float))
        return Z @ self._A.T - self._b

    def contains(self, z, tol: float = 1e-9):
        z = np.asarray(z, float)
        if self.n_halfspaces == 0:
            return True if z.ndim == 1 else np.ones(z.shape[0], bool)
        ok = self.slack(z).min(axis=1) >= -tol
        return bool(ok[0]) if z.ndim == 1 else ok

    def __repr__(self) -> str:
        return f"Polyhedron(dim={self.dim}, halfspaces={self.n_halfspaces})"


@dataclass(frozen=True)
class Cone:
    """Polyhedral convex cone ``cone(generators)``."""

    generators: np.ndarray

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.generators, float))
        if G.size == 0:
            raise ValueError("a cone needs at least one generator")
        G = _normalize_rays(G[np.abs(G).max(axis=1) > 0])
        G.setflags(write=False)
        object.__setattr__(self, "generators", G)

    @classmethod
    def orthant(cls, dim: int) -> "Cone":
        return cls(np.eye(dim))

    @classmethod
    def from_dual_generators(cls, dual_generators) -> "Cone":
        """The cone whose dual cone is ``cone(dual_generators)``."""
        return Cone(dual_generators).dual()

    @property
    def dim(self) -> int:
        return self.generators.shape[1]

    def dual(self) -> "Cone":
        """Dual cone ``{s : s @ c >= 0 for all c in the cone}``."""
        rays, lines = cone_generators(self.generators)
        gens = [r for r in rays] + [l for l in lines] + [-l for l in lines]
        if not gens:
            raise ValueError("C must be proper: its dual cone is {0}")
        return Cone(np.array(gens))

    def extreme_rays(self) -> np.ndarray:
        """Irredundant generators (lineality directions appear with both signs)."""
        rays, lines = cone_generators(self.dual().generators)
        gens = [r for r in rays] + [l for l in lines] + [-l for l in lines]
        return np.array(gens)

    def contains(self, v, tol: float = 1e-9) -> bool:
        v = np.asarray(v, float)
        D = self.dual().generators
        return bool(np.all(D @ v >= -tol * max(1.0, np.abs(v).max())))

    def contains_orthant(self) -> bool:
        return all(self.contains(e) for e in np.eye(self.dim))

    def is_orthant(self) -> bool:
        R = self.extreme_rays()
        if R.shape[0] != self.dim:
            return False
        unit = np.eye(self.dim)
        return all(np.any(np.abs(unit - r).max(axis=1) < 1e-12) for r in R) and \
            np.linalg.matrix_rank(R) == self.dim


def simplex_box_halfspaces(J: int) -> list[tuple[np.ndarray, float]]:
    """Halfspaces bounding the first ``J-1`` lower-image coordinates to the unit simplex."""
    hs = []
    for j in range(J - 1):
        a = np.zeros(J)
        a[j] = 1.0
        hs.append((a, 0.0))
    a = np.zeros(J)
    a[: J - 1] = -1.0
    hs.append((a, -1.0))
    return hs


__all__ = ["Polyhedron", "Cone", "cone_generators", "simplex_box_halfspaces"]
