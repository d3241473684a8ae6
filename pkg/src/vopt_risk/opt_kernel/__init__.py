"""Numerical kernels: linear programs, regularized QPs and a cutting-plane method."""

from .config import DEFAULT_TOLERANCES, Tolerances
from .lp import LinearProgram, LpSolution, kkt_residual, solve_lp

__all__ = ["DEFAULT_TOLERANCES", "Tolerances", "LinearProgram", "LpSolution",
           "kkt_residual", "solve_lp"]
from .kelley import KelleyResult, OracleProgram, solve_kelley  # noqa: E402
from .qp import QpSolution, RegularizedQP, qp_kkt_residual, solve_qp  # noqa: E402

__all__ += ["KelleyResult", "OracleProgram", "solve_kelley", "QpSolution", "RegularizedQP",
            "qp_kkt_residual", "solve_qp"]
