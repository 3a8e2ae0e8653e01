"""Problem containers and the backend-neutral LP entry point."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

FEAS_TOL = 1e-6
OPT_TOL = 1e-7
INT_TOL = 1e-6


class SolverError(RuntimeError):
    pass


@dataclass
class LinearProgram:
    """``sense`` c^T x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  lb <= x <= ub.

    Matrices may be dense arrays or scipy sparse matrices.  ``names`` are
    optional column names, used only for export.
    """

    c: np.ndarray
    A_ub: object = None
    b_ub: np.ndarray | None = None
    A_eq: object = None
    b_eq: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    sense: str = "min"
    names: list[str] | None = None
    row_names_ub: list[str] | None = None
    row_names_eq: list[str] | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.size
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be 'min' or 'max', got {self.sense!r}")
        self.A_ub = _as_csr(self.A_ub, n)
        self.A_eq = _as_csr(self.A_eq, n)
        self.b_ub = np.zeros(0) if self.b_ub is None else np.asarray(self.b_ub, dtype=float).ravel()
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).ravel()
        self.lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, dtype=float).copy()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).copy()
        if self.A_ub.shape[0] != self.b_ub.size or self.A_eq.shape[0] != self.b_eq.size:
            raise ValueError("constraint matrix and right-hand side sizes differ")
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bound vectors must match the number of variables")
        for arr, what in ((self.c, "c"), (self.b_ub, "b_ub"), (self.b_eq, "b_eq")):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {what}")
        for A, what in ((self.A_ub, "A_ub"), (self.A_eq, "A_eq")):
            if A.nnz and not np.all(np.isfinite(A.data)):
                raise ValueError(f"non-finite entries in {what}")
        if np.any(self.lb > self.ub):
            raise ValueError("lb > ub for some variable")

    @property
    def num_vars(self) -> int:
        return self.c.size

    @property
    def num_rows(self) -> int:
        return self.b_ub.size + self.b_eq.size

    def with_bounds(self, lb, ub) -> "LinearProgram":
        return LinearProgram(self.c, self.A_ub, self.b_ub, self.A_eq, self.b_eq, lb, ub, self.sense,
                             self.names, self.row_names_ub, self.row_names_eq)

    def objective(self, x) -> float:
        return float(self.c @ x)

    def max_violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        viol = [0.0]
        if self.b_ub.size:
            viol.append(float(np.max(self.A_ub @ x - self.b_ub)))
        if self.b_eq.size:
            viol.append(float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        viol.append(float(np.max(self.lb - x, initial=0.0)))
        viol.append(float(np.max(x - self.ub, initial=0.0)))
        return max(viol)


def _as_csr(A, n):
    if A is None:
        return sp.csr_matrix((0, n))
    if sp.issparse(A):
        A = A.tocsr().astype(float)
    else:
        A = sp.csr_matrix(np.atleast_2d(np.asarray(A, dtype=float)))
        if A.shape == (1, 0):
            A = sp.csr_matrix((0, n))
    if A.shape[1] != n:
        raise ValueError(f"matrix has {A.shape[1]} columns, expected {n}")
    return A


@dataclass
class LpResult:
    """Solution of a :class:`LinearProgram`.

    Duals are sensitivities of the optimal objective (in the problem's own
    sense) to the right-hand sides: ``duals_ub[i] = d obj / d b_ub[i]``.
    """

    status: str  # optimal | infeasible | unbounded | error
    x: np.ndarray | None = None
    objective: float = float("nan")
    duals_ub: np.ndarray | None = None
    duals_eq: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    iterations: int = 0
    message: str = ""
    basis: list[int] | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def solve_lp(lp: LinearProgram, backend: str = "embedded", **options) -> LpResult:
    if backend == "embedded":
        from .simplex import revised_simplex

        return revised_simplex(lp, **options)
    if backend == "highs":
        return _solve_lp_highs(lp, **options)
    if backend == "external":
        from .external import solve_external

        return solve_external(lp, **options)
    raise ValueError(f"unknown LP backend {backend!r}")


def _solve_lp_highs(lp: LinearProgram, **options) -> LpResult:
    from scipy.optimize import linprog

    sign = -1.0 if lp.sense == "max" else 1.0
    bounds = list(zip([None if not np.isfinite(v) else v for v in lp.lb],
                      [None if not np.isfinite(v) else v for v in lp.ub]))
    res = linprog(
        sign * lp.c,
        A_ub=lp.A_ub if lp.b_ub.size else None,
        b_ub=lp.b_ub if lp.b_ub.size else None,
        A_eq=lp.A_eq if lp.b_eq.size else None,
        b_eq=lp.b_eq if lp.b_eq.size else None,
        bounds=bounds,
        method="highs",
        options={"presolve": options.get("presolve", True)},
    )
    if res.status == 2:
        return LpResult("infeasible", message=res.message)
    if res.status == 3:
        return LpResult("unbounded", message=res.message)
    if res.status != 0:
        return LpResult("error", message=res.message)
    du = sign * res.ineqlin.marginals if lp.b_ub.size else np.zeros(0)
    de = sign * res.eqlin.marginals if lp.b_eq.size else np.zeros(0)
    rc = sign * (res.lower.marginals + res.upper.marginals)
    return LpResult("optimal", res.x, sign * res.fun, du, de, rc, int(res.nit), res.message)
