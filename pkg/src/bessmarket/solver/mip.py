"""Best-bound branch and bound over LP relaxations, plus the HiGHS MILP route."""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass

import numpy as np

from .lp import INT_TOL, LinearProgram, LpResult, solve_lp


@dataclass
class MipNode:
    """LP relaxation restricted by branching bounds."""

    node_id: int
    lb: np.ndarray
    ub: np.ndarray
    bound: float  # parent's relaxation value, in the problem's own sense
    depth: int


@dataclass
class MipResult:
    status: str  # optimal | time_limit | infeasible | unbounded | error
    x: np.ndarray | None
    objective: float
    bound: float
    gap: float
    nodes: int = 0
    message: str = ""

    @property
    def has_incumbent(self) -> bool:
        return self.x is not None


def mip_gap(bound: float, incumbent: float, sense: str) -> float:
    if not math.isfinite(incumbent):
        return math.inf
    diff = (bound - incumbent) if sense == "max" else (incumbent - bound)
    return max(diff, 0.0) / max(1.0, abs(incumbent))


def solve_mip(
    lp: LinearProgram,
    binaries,
    time_limit: float = 600.0,
    gap_target: float = 1e-4,
    backend: str = "embedded",
    lp_backend: str = "embedded",
    **options,
) -> MipResult:
    """Solve ``lp`` with integrality on the variables listed in ``binaries``.

    ``binaries`` may hold general integer columns too; branching uses floor/ceil.
    """
    binaries = np.asarray(sorted(set(int(i) for i in binaries)), dtype=int)
    if backend == "highs":
        return _solve_mip_highs(lp, binaries, time_limit, gap_target, **options)
    if backend == "external":
        from .external import solve_external_mip

        return solve_external_mip(lp, binaries, time_limit=time_limit, gap_target=gap_target, **options)
    if backend != "embedded":
        raise ValueError(f"unknown MILP backend {backend!r}")
    return _branch_and_bound(lp, binaries, time_limit, gap_target, lp_backend)


def _branch_and_bound(lp, binaries, time_limit, gap_target, lp_backend):
    maximize = lp.sense == "max"
    # heap is keyed on a value that is smaller for better bounds, then node id
    key = (lambda v: -v) if maximize else (lambda v: v)
    better = (lambda a, b: a > b) if maximize else (lambda a, b: a < b)
    start = time.perf_counter()

    root = MipNode(0, lp.lb.copy(), lp.ub.copy(), math.inf if maximize else -math.inf, 0)
    heap = [(key(root.bound), 0, root)]
    next_id = 1
    incumbent_x = None
    incumbent = -math.inf if maximize else math.inf
    nodes = 0
    status = "optimal"
    global_bound = root.bound

    while heap:
        if time.perf_counter() - start > time_limit:
            status = "time_limit"
            break
        global_bound = heap[0][2].bound
        if incumbent_x is not None and mip_gap(global_bound, incumbent, lp.sense) <= gap_target:
            break
        _, _, node = heapq.heappop(heap)
        if incumbent_x is not None and not better(node.bound, incumbent):
            continue
        nodes += 1
        res: LpResult = solve_lp(lp.with_bounds(node.lb, node.ub), backend=lp_backend)
        if res.status == "infeasible":
            continue
        if res.status == "unbounded":
            if incumbent_x is None and node.node_id == 0:
                return MipResult("unbounded", None, math.nan, math.nan, math.inf, nodes)
            continue
        if res.status != "optimal":
            return MipResult("error", incumbent_x, incumbent, global_bound, math.inf, nodes, res.message)
        val = res.objective
        if incumbent_x is not None and not better(val, incumbent + (1e-9 if maximize else -1e-9)):
            continue
        xb = res.x[binaries]
        frac = np.abs(xb - np.round(xb))
        if binaries.size == 0 or frac.max() <= INT_TOL:
            x = res.x.copy()
            x[binaries] = np.round(x[binaries])
            if incumbent_x is None or better(val, incumbent):
                incumbent, incumbent_x = lp.objective(x), x
            continue
        # most fractional; ties broken by lowest column index
        score = np.abs(frac - 0.5)
        pos = int(np.argmin(score))
        j = int(binaries[pos])
        v = res.x[j]
        down_ub = node.ub.copy()
        down_ub[j] = math.floor(v)
        up_lb = node.lb.copy()
        up_lb[j] = math.ceil(v)
        for lb_, ub_ in ((node.lb.copy(), down_ub), (up_lb, node.ub.copy())):
            child = MipNode(next_id, lb_, ub_, val, node.depth + 1)
            heapq.heappush(heap, (key(val), next_id, child))
            next_id += 1
    else:
        global_bound = incumbent

    if heap and status != "time_limit":
        global_bound = heap[0][2].bound
        if incumbent_x is not None:
            global_bound = max(global_bound, incumbent) if maximize else min(global_bound, incumbent)
    if incumbent_x is None:
        if status == "time_limit":
            return MipResult("time_limit", None, math.nan, global_bound, math.inf, nodes)
        return MipResult("infeasible", None, math.nan, math.nan, math.inf, nodes)
    gap = mip_gap(global_bound, incumbent, lp.sense)
    return MipResult(status, incumbent_x, incumbent, global_bound, gap, nodes)


def _solve_mip_highs(lp, binaries, time_limit, gap_target, **options):
    from scipy.optimize import Bounds, LinearConstraint, milp

    sign = -1.0 if lp.sense == "max" else 1.0
    integrality = np.zeros(lp.num_vars)
    integrality[binaries] = 1
    cons = []
    if lp.b_ub.size:
        cons.append(LinearConstraint(lp.A_ub, -np.inf, lp.b_ub))
    if lp.b_eq.size:
        cons.append(LinearConstraint(lp.A_eq, lp.b_eq, lp.b_eq))
    opts = {"time_limit": float(time_limit), "mip_rel_gap": float(gap_target), "disp": bool(options.get("verbose"))}
    if "presolve" in options:
        opts["presolve"] = options["presolve"]
    res = milp(sign * lp.c, constraints=cons, integrality=integrality, bounds=Bounds(lp.lb, lp.ub), options=opts)
    if res.status == 2:
        return MipResult("infeasible", None, math.nan, math.nan, math.inf, message=res.message)
    if res.status == 3:
        return MipResult("unbounded", None, math.nan, math.nan, math.inf, message=res.message)
    if res.x is None:
        status = "time_limit" if res.status == 1 else "error"
        return MipResult(status, None, math.nan, math.nan, math.inf, message=res.message)
    x = np.asarray(res.x, dtype=float)
    x[binaries] = np.round(x[binaries])
    obj = lp.objective(x)
    bound = sign * getattr(res, "mip_dual_bound", sign * obj)
    if bound is None or not np.isfinite(bound):
        bound = obj
    status = "optimal" if res.status == 0 else "time_limit"
    return MipResult(status, x, obj, bound, mip_gap(bound, obj, lp.sense), int(getattr(res, "mip_node_count", 0) or 0),
                     res.message)
