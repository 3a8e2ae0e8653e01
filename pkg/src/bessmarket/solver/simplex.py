"""Bounded-variable revised simplex (dense basis inverse, two phases).

Intended for desk-scale problems: the basis inverse is held as a dense
matrix, updated with eta transformations and refactorized periodically.
Dantzig pricing is used until the objective stalls, after which Bland's
rule takes over until progress resumes.
"""

from __future__ import annotations

import numpy as np

from .lp import OPT_TOL, LinearProgram, LpResult, SolverError

AT_LOWER, AT_UPPER, FREE_ZERO, BASIC = 0, 1, 2, 3

PIVOT_TOL = 1e-9
REFACTOR_EVERY = 64
STALL_LIMIT = 40


class _Tableau:
    def __init__(self, A, b, c, lb, ub):
        self.A = A
        self.b = b
        self.c = c
        self.lb = lb
        self.ub = ub
        self.m, self.n = A.shape

    def nonbasic_value(self, j, status):
        if status == AT_LOWER:
            return self.lb[j]
        if status == AT_UPPER:
            return self.ub[j]
        return 0.0


def _initial_status(lb, ub):
    status = np.empty(lb.size, dtype=np.int64)
    for j in range(lb.size):
        if np.isfinite(lb[j]):
            status[j] = AT_LOWER
        elif np.isfinite(ub[j]):
            status[j] = AT_UPPER
        else:
            status[j] = FREE_ZERO
    return status


def _values(tab, basis, status, Binv):
    x = np.zeros(tab.n)
    for j in range(tab.n):
        if status[j] != BASIC:
            x[j] = tab.nonbasic_value(j, status[j])
    rhs = tab.b - tab.A @ x
    x[basis] = Binv @ rhs
    return x


def _simplex_loop(tab, basis, status, Binv, max_iter, tol, stats):
    """Run primal simplex iterations from a feasible basis. Returns status string."""
    x = _values(tab, basis, status, Binv)
    since_refactor = 0
    stall = 0
    use_bland = False
    last_obj = float(tab.c @ x)
    while True:
        if stats["iterations"] >= max_iter:
            return "iteration_limit", x
        y = tab.c[basis] @ Binv
        d = tab.c - y @ tab.A
        d[basis] = 0.0

        # entering candidate
        improve = np.zeros(tab.n)
        lo = status == AT_LOWER
        up = status == AT_UPPER
        fr = status == FREE_ZERO
        improve[lo] = np.where(d[lo] < -tol, -d[lo], 0.0)
        improve[up] = np.where(d[up] > tol, d[up], 0.0)
        improve[fr] = np.where(np.abs(d[fr]) > tol, np.abs(d[fr]), 0.0)
        # fixed variables never enter
        improve[(tab.ub - tab.lb) <= 0] = 0.0
        cands = np.flatnonzero(improve > 0)
        if cands.size == 0:
            return "optimal", x
        if use_bland:
            j = int(cands[0])
        else:
            j = int(cands[np.argmax(improve[cands])])
        direction = 1.0 if d[j] < 0 else -1.0

        alpha = Binv @ tab.A[:, j]
        # x_B(theta) = x_B - direction * theta * alpha
        theta = np.inf
        leave = -1
        leave_to_upper = False
        if np.isfinite(tab.ub[j]) and np.isfinite(tab.lb[j]):
            theta = tab.ub[j] - tab.lb[j]
        xb = x[basis]
        for i in range(tab.m):
            rate = -direction * alpha[i]
            if abs(rate) <= PIVOT_TOL:
                continue
            k = basis[i]
            if rate < 0 and np.isfinite(tab.lb[k]):
                t = (xb[i] - tab.lb[k]) / -rate
                to_upper = False
            elif rate > 0 and np.isfinite(tab.ub[k]):
                t = (tab.ub[k] - xb[i]) / rate
                to_upper = True
            else:
                continue
            t = max(t, 0.0)
            if t < theta - 1e-12 or (use_bland and leave >= 0 and abs(t - theta) <= 1e-12 and k < basis[leave]):
                theta = t
                leave = i
                leave_to_upper = to_upper
        if not np.isfinite(theta):
            return "unbounded", x

        stats["iterations"] += 1
        if leave < 0:
            # bound flip of the entering variable
            status[j] = AT_UPPER if status[j] == AT_LOWER else AT_LOWER
        else:
            k = basis[leave]
            status[k] = AT_UPPER if leave_to_upper else AT_LOWER
            if np.isfinite(tab.lb[k]) and tab.lb[k] == tab.ub[k]:
                status[k] = AT_LOWER
            basis[leave] = j
            status[j] = BASIC
            piv = alpha[leave]
            if abs(piv) < PIVOT_TOL:
                raise SolverError("pivot element too small")
            # eta update of the basis inverse
            row = Binv[leave] / piv
            Binv -= np.outer(alpha, row)
            Binv[leave] = row
            since_refactor += 1
            if since_refactor >= REFACTOR_EVERY:
                Binv[:] = _refactor(tab, basis)
                since_refactor = 0
        x = _values(tab, basis, status, Binv)
        obj = float(tab.c @ x)
        if obj < last_obj - 1e-12 * max(1.0, abs(last_obj)):
            stall = 0
            use_bland = False
        else:
            stall += 1
            if stall > STALL_LIMIT:
                use_bland = True
        last_obj = obj


def _refactor(tab, basis):
    B = tab.A[:, basis]
    try:
        return np.linalg.inv(B)
    except np.linalg.LinAlgError:
        raise SolverError("basis matrix is singular") from None


def revised_simplex(lp: LinearProgram, max_iter: int = 50_000, tol: float = OPT_TOL, **_) -> LpResult:
    sign = -1.0 if lp.sense == "max" else 1.0
    n = lp.num_vars
    A_ub = lp.A_ub.toarray()
    A_eq = lp.A_eq.toarray()
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq

    # structural + slack columns
    A = np.zeros((m, n + m_ub))
    A[:m_ub, :n] = A_ub
    A[m_ub:, :n] = A_eq
    A[:m_ub, n:] = np.eye(m_ub)
    b = np.concatenate([lp.b_ub, lp.b_eq])
    lb = np.concatenate([lp.lb, np.zeros(m_ub)])
    ub = np.concatenate([lp.ub, np.full(m_ub, np.inf)])
    c = np.concatenate([sign * lp.c, np.zeros(m_ub)])

    if m == 0:
        x = np.where(np.isfinite(lp.lb), lp.lb, np.where(np.isfinite(lp.ub), lp.ub, 0.0))
        d = sign * lp.c
        for j in range(n):
            if (d[j] < -tol and not np.isfinite(lp.ub[j])) or (d[j] > tol and not np.isfinite(lp.lb[j])):
                return LpResult("unbounded")
            x[j] = lp.ub[j] if d[j] < 0 else (lp.lb[j] if np.isfinite(lp.lb[j]) else 0.0)
        return LpResult("optimal", x, float(lp.c @ x), np.zeros(0), np.zeros(0), lp.c.copy(), 0)

    # phase 1 with one artificial per row
    status = _initial_status(lb, ub)
    x0 = np.array([0.0 if status[j] == FREE_ZERO else (lb[j] if status[j] == AT_LOWER else ub[j])
                   for j in range(lb.size)])
    resid = b - A @ x0
    art_sign = np.where(resid >= 0, 1.0, -1.0)
    A1 = np.hstack([A, np.diag(art_sign)])
    lb1 = np.concatenate([lb, np.zeros(m)])
    ub1 = np.concatenate([ub, np.full(m, np.inf)])
    c1 = np.concatenate([np.zeros(lb.size), np.ones(m)])
    status1 = np.concatenate([status, np.full(m, BASIC)])
    basis = list(range(lb.size, lb.size + m))
    Binv = np.diag(art_sign)  # inverse of diag(+-1) is itself
    stats = {"iterations": 0}
    tab1 = _Tableau(A1, b, c1, lb1, ub1)
    st, x1 = _simplex_loop(tab1, basis, status1, Binv, max_iter, tol * 1e-2, stats)
    if st == "iteration_limit":
        return LpResult("error", message="iteration limit in phase 1", iterations=stats["iterations"])
    infeas = float(x1[lb.size:].sum())
    if infeas > 1e-7 * max(1.0, np.abs(b).max(initial=0.0)):
        return LpResult("infeasible", iterations=stats["iterations"], message=f"phase 1 residual {infeas:.3g}")

    # phase 2: artificials pinned at zero
    ub1[lb.size:] = 0.0
    for k in range(lb.size, lb.size + m):
        if status1[k] != BASIC:
            status1[k] = AT_LOWER
    c2 = np.concatenate([c, np.zeros(m)])
    tab2 = _Tableau(A1, b, c2, lb1, ub1)
    Binv = _refactor(tab2, basis)
    st, x2 = _simplex_loop(tab2, basis, status1, Binv, max_iter, tol, stats)
    if st == "unbounded":
        return LpResult("unbounded", iterations=stats["iterations"])
    if st != "optimal":
        return LpResult("error", message=st, iterations=stats["iterations"])

    Binv = _refactor(tab2, basis)
    x2 = _values(tab2, basis, status1, Binv)
    y = c2[basis] @ Binv
    d = c2 - y @ A1
    x = x2[:n]
    res = LpResult(
        "optimal",
        x,
        float(lp.c @ x),
        sign * y[:m_ub],
        sign * y[m_ub:],
        sign * d[:n],
        stats["iterations"],
        basis=list(basis),
    )
    return res


def check_optimality(lp: LinearProgram, res: LpResult, feas_tol: float = 1e-6, opt_tol: float = 1e-7) -> dict:
    """Optimality certificate: primal feasibility, dual feasibility and complementary slackness.

    Works on any :class:`LpResult` carrying duals, whatever backend produced it.
    Returns the worst violation of each condition (scaled by 1 + |value|).
    """
    sign = -1.0 if lp.sense == "max" else 1.0
    x = res.x
    yu = sign * res.duals_ub
    ye = sign * res.duals_eq
    d = sign * lp.c - lp.A_ub.T @ yu - lp.A_eq.T @ ye
    primal = lp.max_violation(x)
    dual = 0.0
    cs = 0.0
    if yu.size:
        dual = max(dual, float(np.max(yu)))  # min-form duals of <= rows must be <= 0
        slack = lp.b_ub - lp.A_ub @ x
        cs = max(cs, float(np.max(np.abs(yu * slack) / (1 + np.abs(lp.b_ub)))))
    for j in range(lp.num_vars):
        at_lb = np.isfinite(lp.lb[j]) and x[j] - lp.lb[j] <= feas_tol
        at_ub = np.isfinite(lp.ub[j]) and lp.ub[j] - x[j] <= feas_tol
        if at_lb and at_ub:
            continue
        if at_lb:
            dual = max(dual, -d[j])
        elif at_ub:
            dual = max(dual, d[j])
        else:
            dual = max(dual, abs(d[j]))
    gap = abs(float(lp.c @ x) - res.objective) / (1 + abs(res.objective))
    return {"primal": primal, "dual": dual, "complementarity": cs, "objective": gap,
            "ok": primal <= feas_tol and dual <= 1e3 * opt_tol and cs <= 1e3 * opt_tol}
