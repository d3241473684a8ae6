"""Central tolerance record shared by the numerical kernels."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances used across the package.

    Attributes
    ----------
    lp_feasibility : float
        Primal feasibility tolerance of the simplex routine.
    lp_optimality : float
        Reduced-cost tolerance of the simplex routine.
    pivot : float
        Smallest pivot magnitude accepted in a ratio test.
    qp : float
        Target accuracy of the interior point QP backend.
    kelley : float
        Default constraint violation / gap tolerance of the cutting-plane method.
    membership : float
        Slack allowed when testing membership in a risk region.
    bisection : float
        Absolute tolerance of the scalar bisection used for entry heights.
    vertex : float
        Incidence tolerance of the vertex enumeration.
    stall_pivots : int
        Consecutive degenerate pivots after which Bland's rule is used.
    """

    lp_feasibility: float = 1e-9
    lp_optimality: float = 1e-9
    pivot: float = 1e-11
    qp: float = 1e-10
    kelley: float = 1e-6
    membership: float = 1e-9
    bisection: float = 1e-9
    vertex: float = 1e-9
    stall_pivots: int = 30


DEFAULT_TOLERANCES = Tolerances()
