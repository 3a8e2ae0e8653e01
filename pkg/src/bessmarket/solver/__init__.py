"""LP / MILP solving kernel with a backend-neutral interface.

Backends: ``embedded`` (revised simplex + branch and bound in this package),
``highs`` (scipy's HiGHS bindings, in process) and ``external`` (MPS exchange
with a configured executable).
"""

from .lp import FEAS_TOL, INT_TOL, OPT_TOL, LinearProgram, LpResult, SolverError, solve_lp
from .mip import MipNode, MipResult, mip_gap, solve_mip
from .simplex import check_optimality, revised_simplex

__all__ = [
    "FEAS_TOL",
    "INT_TOL",
    "OPT_TOL",
    "LinearProgram",
    "LpResult",
    "MipNode",
    "MipResult",
    "SolverError",
    "check_optimality",
    "mip_gap",
    "revised_simplex",
    "solve_lp",
    "solve_mip",
]
