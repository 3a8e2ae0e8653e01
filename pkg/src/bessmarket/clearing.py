"""Joint energy / reserve / regulation market clearing (the ISO-side LP).

The LP is assembled in a canonical form that the bilevel reformulation reuses
unchanged::

    min  c^T y
    s.t. a_r^T y >= b_r   (inequality rows, dual pi_r >= 0)
         a_r^T y  = b_r   (equality rows,   dual pi_r free)
         y_k >= 0 for k in nonneg, other columns free

Every row carries a constraint-group tag:

    1 battery offers and power rating  4 system requirements (MCP duals)
    2 generator limits and ramping     5 nodal power balance (LMP duals)
    3 regulation mileage coupling      6 DC network flows and thermal limits

Objective coefficients are price x interval length, so balance duals are
LMP x dt (reported back in $/MWh).
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .model import PRODUCTS, OfferSet, SystemModel, validate_offers
from .solver import LinearProgram, solve_lp

GROUPS = {
    1: "battery offers",
    2: "generator limits",
    3: "regulation performance",
    4: "system requirements",
    5: "power balance",
    6: "transmission network",
}

GEN_PRODUCTS = ("energy", "reserve", "regCap", "regMileage")
ANCILLARY = ("reserve", "regCap", "regMileage")
# battery products that sell (+1) or buy (-1) in the clearing objective
PRODUCT_SIGN = {"energyDischarge": 1.0, "energyCharge": -1.0, "reserve": 1.0, "regCap": 1.0, "regMileage": 1.0}


class ClearingError(RuntimeError):
    def __init__(self, status, message, group=None):
        super().__init__(message)
        self.status = status
        self.group = group


@dataclass
class ClearingLP:
    model: SystemModel
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    is_eq: np.ndarray  # bool per row
    group: np.ndarray  # int tag per row
    row_names: list[str]
    col_names: list[str]
    nonneg: np.ndarray  # bool per column
    # index arrays (-1 where absent)
    gen_idx: dict[str, np.ndarray]  # product -> (G, T)
    bat_idx: dict[str, np.ndarray]  # product -> (B, T)
    theta_idx: np.ndarray  # (N, T); slack bus -1
    flow_idx: np.ndarray  # (L, T)
    offer_row: dict[str, np.ndarray]  # product -> (B, T) row index of  -y >= -q
    balance_row: np.ndarray  # (N, T)
    req_row: dict[str, np.ndarray]  # ancillary product -> (T,)
    line_rows: np.ndarray  # (L, T, 2) rows of  f <= F  and  -f <= F
    coupling_rows: np.ndarray  # (B, T, 2) battery headroom / footroom rows
    gen_cost_mask: np.ndarray  # columns whose cost is fixed (generators)
    offers: OfferSet | None = None
    meta: dict = field(default_factory=dict)

    @property
    def num_vars(self) -> int:
        return self.c.size

    @property
    def num_rows(self) -> int:
        return self.b.size

    def rows_in_group(self, g: int) -> np.ndarray:
        return np.flatnonzero(self.group == g)

    def to_linear_program(self) -> LinearProgram:
        ge = ~self.is_eq
        lb = np.where(self.nonneg, 0.0, -np.inf)
        return LinearProgram(
            self.c,
            A_ub=-self.A[ge],
            b_ub=-self.b[ge],
            A_eq=self.A[self.is_eq],
            b_eq=self.b[self.is_eq],
            lb=lb,
            ub=np.full(self.c.size, np.inf),
            sense="min",
            names=self.col_names,
            row_names_ub=[n for n, e in zip(self.row_names, self.is_eq) if not e],
            row_names_eq=[n for n, e in zip(self.row_names, self.is_eq) if e],
        )

    def export_mps(self, path) -> None:
        from .solver.external import write_mps

        write_mps(self.to_linear_program(), path, name="CLEARING")


class _Builder:
    def __init__(self):
        self.cols: list[str] = []
        self.nonneg: list[bool] = []
        self.cost: list[float] = []
        self.rows: list[str] = []
        self.eq: list[bool] = []
        self.grp: list[int] = []
        self.rhs: list[float] = []
        self.ri: list[int] = []
        self.ci: list[int] = []
        self.vals: list[float] = []

    def var(self, name, nonneg=True, cost=0.0):
        self.cols.append(name)
        self.nonneg.append(nonneg)
        self.cost.append(cost)
        return len(self.cols) - 1

    def row(self, name, terms, rhs, group, eq=False):
        r = len(self.rows)
        self.rows.append(name)
        self.eq.append(eq)
        self.grp.append(group)
        self.rhs.append(rhs)
        for j, v in terms:
            if v != 0.0:
                self.ri.append(r)
                self.ci.append(j)
                self.vals.append(v)
        return r


def _slack_paths(model: SystemModel):
    """Lines on a BFS path from the slack bus to each bus (for angle bounds)."""
    adj: dict[str, list[tuple[str, int]]] = {b.id: [] for b in model.buses}
    for k, ln in enumerate(model.lines):
        adj[ln.from_bus].append((ln.to_bus, k))
        adj[ln.to_bus].append((ln.from_bus, k))
    path: dict[str, list[int]] = {model.slack: []}
    queue = deque([model.slack])
    while queue:
        u = queue.popleft()
        for v, k in sorted(adj[u]):
            if v not in path:
                path[v] = path[u] + [k]
                queue.append(v)
    return path


def build_clearing_lp(model: SystemModel, offers: OfferSet | None = None, check_offers: bool = True) -> ClearingLP:
    """Assemble the clearing LP.  With ``offers=None`` battery offers are left at zero
    (the bilevel layer supplies them symbolically)."""
    if offers is not None and check_offers:
        problems = validate_offers(model, offers)
        if problems:
            raise ValueError("; ".join(problems))
    if len(model.buses) > 1:
        reach = _slack_paths(model)
        if len(reach) != len(model.buses):
            raise ValueError("network is not connected to the slack bus")
    T, dt = model.T, model.dt
    G, B, N, L = len(model.generators), len(model.batteries), len(model.buses), len(model.lines)
    bus_ix = model.bus_index()
    bld = _Builder()

    gen_idx = {p: np.full((G, T), -1) for p in GEN_PRODUCTS}
    bat_idx = {p: np.full((B, T), -1) for p in PRODUCTS}
    theta_idx = np.full((N, T), -1)
    flow_idx = np.full((L, T), -1)
    offer_row = {p: np.full((B, T), -1) for p in PRODUCTS}
    balance_row = np.full((N, T), -1)
    req_row = {p: np.full(T, -1) for p in ANCILLARY}
    line_rows = np.full((L, T, 2), -1)
    coupling_rows = np.full((B, T, 2), -1)

    price_attr = {
        "energy": "energy_price_offer",
        "reserve": "reserve_price_offer",
        "regCap": "reg_cap_price_offer",
        "regMileage": "reg_mileage_price_offer",
    }
    for t in range(T):
        for gi, g in enumerate(model.generators):
            for p in GEN_PRODUCTS:
                prof = getattr(g, price_attr[p])
                price = 0.0 if prof is None else float(prof[t])
                # generator energy is kept free; the pMin row implies p >= 0
                gen_idx[p][gi, t] = bld.var(f"g_{p}[{g.id},{t}]", nonneg=(p != "energy"), cost=price * dt)
        for bi, bt in enumerate(model.batteries):
            for p in PRODUCTS:
                price = 0.0 if offers is None else float(offers[bt.id].price[p][t])
                bat_idx[p][bi, t] = bld.var(f"b_{p}[{bt.id},{t}]", cost=PRODUCT_SIGN[p] * price * dt)
        for ni, bus in enumerate(model.buses):
            if bus.id != model.slack:
                theta_idx[ni, t] = bld.var(f"theta[{bus.id},{t}]", nonneg=False)
        for li, ln in enumerate(model.lines):
            flow_idx[li, t] = bld.var(f"flow[{ln.id},{t}]", nonneg=False)

    col = bld.cols
    gen_cost_mask = np.zeros(len(col), dtype=bool)
    for p in GEN_PRODUCTS:
        gen_cost_mask[gen_idx[p].ravel()] = True

    req = model.requirements
    mm = model.mileage_multiplier
    for t in range(T):
        # group 1: battery quantity offers
        for bi, bt in enumerate(model.batteries):
            for p in PRODUCTS:
                q = 0.0 if offers is None else float(offers[bt.id].quantity[p][t])
                offer_row[p][bi, t] = bld.row(f"offer_{p}[{bt.id},{t}]", [(bat_idx[p][bi, t], -1.0)], -q, 1)
            # accumulated awards within the power rating: reserve needs headroom, regulation both sides
            d, ch = bat_idx["energyDischarge"][bi, t], bat_idx["energyCharge"][bi, t]
            r, c = bat_idx["reserve"][bi, t], bat_idx["regCap"][bi, t]
            coupling_rows[bi, t, 0] = bld.row(f"headroom[{bt.id},{t}]", [(d, -1.0), (r, -1.0), (c, -1.0)],
                                              -bt.discharge_limit, 1)
            coupling_rows[bi, t, 1] = bld.row(f"footroom[{bt.id},{t}]", [(ch, -1.0), (c, -1.0)], -bt.charge_limit, 1)
        # group 2: generator limits and ramping
        for gi, g in enumerate(model.generators):
            pe, pr, pc = gen_idx["energy"][gi, t], gen_idx["reserve"][gi, t], gen_idx["regCap"][gi, t]
            bld.row(f"pmin[{g.id},{t}]", [(pe, 1.0), (pr, -1.0), (pc, -1.0)], g.p_min, 2)
            bld.row(f"pmax[{g.id},{t}]", [(pe, -1.0), (pr, -1.0), (pc, -1.0)], -g.p_max, 2)
            if t > 0 and g.ramp_limit < g.p_max - g.p_min:
                prev = gen_idx["energy"][gi, t - 1]
                bld.row(f"rampup[{g.id},{t}]", [(pe, -1.0), (prev, 1.0)], -g.ramp_limit, 2)
                bld.row(f"rampdn[{g.id},{t}]", [(pe, 1.0), (prev, -1.0)], -g.ramp_limit, 2)
        # group 3: mileage assignment bounded by scheduled regulation capacity
        for gi, g in enumerate(model.generators):
            bld.row(f"mileage[{g.id},{t}]", [(gen_idx["regCap"][gi, t], mm), (gen_idx["regMileage"][gi, t], -1.0)], 0.0, 3)
        for bi, bt in enumerate(model.batteries):
            bld.row(f"mileage[{bt.id},{t}]", [(bat_idx["regCap"][bi, t], mm), (bat_idx["regMileage"][bi, t], -1.0)], 0.0, 3)
        # group 4: system requirements
        terms = [(gen_idx["reserve"][gi, t], 1.0) for gi in range(G)] + [(bat_idx["reserve"][bi, t], 1.0) for bi in range(B)]
        req_row["reserve"][t] = bld.row(f"req_reserve[{t}]", terms, float(req.reserve_req[t]), 4)
        terms = [(gen_idx["regCap"][gi, t], 1.0) for gi in range(G)] + [(bat_idx["regCap"][bi, t], 1.0) for bi in range(B)]
        req_row["regCap"][t] = bld.row(f"req_regCap[{t}]", terms, float(req.reg_cap_req[t]), 4)
        terms = [(gen_idx["regMileage"][gi, t], g.perf_score) for gi, g in enumerate(model.generators)]
        terms += [(bat_idx["regMileage"][bi, t], bt.perf_score) for bi, bt in enumerate(model.batteries)]
        req_row["regMileage"][t] = bld.row(f"req_regMileage[{t}]", terms, float(req.reg_mileage_req[t]), 4)
        # group 5: nodal balance (injections - withdrawals = load)
        inj: dict[int, list[tuple[int, float]]] = {ni: [] for ni in range(N)}
        for gi, g in enumerate(model.generators):
            inj[bus_ix[g.bus]].append((gen_idx["energy"][gi, t], 1.0))
        for bi, bt in enumerate(model.batteries):
            inj[bus_ix[bt.bus]].append((bat_idx["energyDischarge"][bi, t], 1.0))
            inj[bus_ix[bt.bus]].append((bat_idx["energyCharge"][bi, t], -1.0))
        for li, ln in enumerate(model.lines):
            inj[bus_ix[ln.from_bus]].append((flow_idx[li, t], -1.0))
            inj[bus_ix[ln.to_bus]].append((flow_idx[li, t], 1.0))
        for ni, bus in enumerate(model.buses):
            balance_row[ni, t] = bld.row(f"balance[{bus.id},{t}]", inj[ni], float(bus.load_profile[t]), 5, eq=True)
        # group 6: DC flows (angles scaled by baseMVA) and thermal limits
        for li, ln in enumerate(model.lines):
            f = flow_idx[li, t]
            sus = 1.0 / ln.reactance
            terms = [(f, 1.0)]
            tf, tt = theta_idx[bus_ix[ln.from_bus], t], theta_idx[bus_ix[ln.to_bus], t]
            if tf >= 0:
                terms.append((tf, -sus))
            if tt >= 0:
                terms.append((tt, sus))
            bld.row(f"flowdef[{ln.id},{t}]", terms, 0.0, 6, eq=True)
            line_rows[li, t, 0] = bld.row(f"flowmax[{ln.id},{t}]", [(f, -1.0)], -ln.thermal_limit, 6)
            line_rows[li, t, 1] = bld.row(f"flowmin[{ln.id},{t}]", [(f, 1.0)], -ln.thermal_limit, 6)

    A = sp.csr_matrix((bld.vals, (bld.ri, bld.ci)), shape=(len(bld.rows), len(bld.cols)))
    return ClearingLP(
        model=model,
        c=np.array(bld.cost),
        A=A,
        b=np.array(bld.rhs),
        is_eq=np.array(bld.eq),
        group=np.array(bld.grp),
        row_names=bld.rows,
        col_names=bld.cols,
        nonneg=np.array(bld.nonneg),
        gen_idx=gen_idx,
        bat_idx=bat_idx,
        theta_idx=theta_idx,
        flow_idx=flow_idx,
        offer_row=offer_row,
        balance_row=balance_row,
        req_row=req_row,
        line_rows=line_rows,
        coupling_rows=coupling_rows,
        gen_cost_mask=gen_cost_mask,
        offers=offers,
    )


# --------------------------------------------------------------------------
# results


@dataclass
class ClearingResult:
    model: SystemModel
    gen: dict[str, np.ndarray]  # product -> (G, T) MW
    battery: dict[str, np.ndarray]  # product -> (B, T) MW
    lmp: np.ndarray  # (N, T) $/MWh
    mcp: dict[str, np.ndarray]  # ancillary product -> (T,) $/MWh
    flows: np.ndarray  # (L, T) MW
    angles: np.ndarray  # (N, T) rad
    objective: float
    dual_objective: float
    battery_costs: dict[str, np.ndarray]  # C^{B,.}: product -> (B, T) $
    gen_costs: dict[str, np.ndarray]  # C^{G,.}: product -> (G, T) $
    degenerate: bool = False
    duals: np.ndarray | None = None  # canonical-form row duals
    y: np.ndarray | None = None

    @property
    def duality_gap(self) -> float:
        return abs(self.objective - self.dual_objective) / max(1.0, abs(self.objective))

    def battery_index(self, battery_id: str) -> int:
        for i, b in enumerate(self.model.batteries):
            if b.id == battery_id:
                return i
        raise KeyError(f"unknown battery id {battery_id!r}")


def result_from_solution(clp: ClearingLP, y: np.ndarray, pi: np.ndarray) -> ClearingResult:
    """Map a primal/dual pair in canonical form back to schedules and prices."""
    model = clp.model
    dt = model.dt
    gen = {p: y[idx] for p, idx in clp.gen_idx.items()}
    bat = {p: y[idx] for p, idx in clp.bat_idx.items()}
    lmp = pi[clp.balance_row] / dt
    mcp = {p: pi[rows] / dt for p, rows in clp.req_row.items()}
    flows = y[clp.flow_idx] if clp.flow_idx.size else np.zeros((0, model.T))
    angles = np.zeros((len(model.buses), model.T))
    mask = clp.theta_idx >= 0
    angles[mask] = y[clp.theta_idx[mask]] / model.base_mva
    c = clp.c
    bcost = {p: c[idx] * y[idx] for p, idx in clp.bat_idx.items()}
    gcost = {p: c[idx] * y[idx] for p, idx in clp.gen_idx.items()}
    obj = float(c @ y)
    dual_obj = float(clp.b @ pi)
    return ClearingResult(model, gen, bat, lmp, mcp, flows, angles, obj, dual_obj, bcost, gcost, duals=pi, y=y)


def _degenerate(clp: ClearingLP, y: np.ndarray, pi: np.ndarray, tol: float = 1e-7) -> bool:
    act = clp.A @ y - clp.b
    active_rows = int(np.sum(clp.is_eq) + np.sum((~clp.is_eq) & (np.abs(act) <= tol)))
    active_bounds = int(np.sum(clp.nonneg & (np.abs(y) <= tol)))
    return active_rows + active_bounds > clp.num_vars


def solve_clearing(clp: ClearingLP, backend: str = "highs") -> ClearingResult:
    lp = clp.to_linear_program()
    res = solve_lp(lp, backend=backend)
    if res.status == "infeasible":
        raise ClearingError("infeasible", "market clearing is infeasible" + _infeasible_group(clp), _infeasible_group_id(clp))
    if res.status == "unbounded":
        raise ClearingError("unbounded", "market clearing is unbounded (check free variables in groups 5-6)", 6)
    if res.status != "optimal":
        raise ClearingError(res.status, f"clearing solve failed: {res.message}")
    pi = np.zeros(clp.num_rows)
    ge = ~clp.is_eq
    pi[ge] = -res.duals_ub
    pi[clp.is_eq] = res.duals_eq
    out = result_from_solution(clp, res.x, pi)
    out.degenerate = _degenerate(clp, res.x, pi)
    return out


def _infeasible_group_id(clp: ClearingLP):
    """Cheap attribution: the requirement group is checked against total capability."""
    m = clp.model
    cap_gen = sum(g.p_max - g.p_min for g in m.generators)
    bat = 0.0
    if clp.offers is not None:
        bat = sum(float(np.max(clp.offers[b.id].quantity["reserve"] + clp.offers[b.id].quantity["regCap"]))
                  for b in m.batteries)
    need = np.asarray(m.requirements.reserve_req) + np.asarray(m.requirements.reg_cap_req)
    if np.any(need > cap_gen + bat):
        return 4
    total_cap = sum(g.p_max for g in m.generators)
    bat_dis = sum(b.discharge_limit for b in m.batteries)
    if np.any(m.total_load() > total_cap + bat_dis):
        return 5
    # energy plus headroom for reserve/regulation exceeds what the units can hold
    if np.any(m.total_load() + need > total_cap + bat_dis):
        return 2
    return None


def _infeasible_group(clp: ClearingLP) -> str:
    g = _infeasible_group_id(clp)
    return "" if g is None else f" (group {g}: {GROUPS[g]})"


def clear_market(model: SystemModel, offers: OfferSet | None = None, backend: str = "highs") -> ClearingResult:
    return solve_clearing(build_clearing_lp(model, offers), backend=backend)


# --------------------------------------------------------------------------
# audits


def complementarity_violation(clp: ClearingLP, res: ClearingResult) -> float:
    """Worst |slack x dual| over inequality rows and |y x reduced cost| over nonneg columns."""
    y, pi = res.y, res.duals
    slack = clp.A @ y - clp.b
    ge = ~clp.is_eq
    worst = float(np.max(np.abs(slack[ge] * pi[ge]), initial=0.0))
    rc = clp.c - clp.A.T @ pi
    worst = max(worst, float(np.max(np.abs(rc[clp.nonneg] * y[clp.nonneg]), initial=0.0)))
    return worst


def simultaneous_charge_discharge(res: ClearingResult, tol: float = 1e-6) -> list[tuple[str, int]]:
    both = (res.battery["energyDischarge"] > tol) & (res.battery["energyCharge"] > tol)
    return [(res.model.batteries[i].id, int(t)) for i, t in zip(*np.nonzero(both))]


# --------------------------------------------------------------------------
# revenue


@dataclass
class RevenueBreakdown:
    battery_id: str
    energy: np.ndarray  # R^E per interval, $
    reserve: np.ndarray  # R^Rs
    reg_cap: np.ndarray  # R^RgC
    reg_mileage: np.ndarray  # R^RgM
    degradation_cost: np.ndarray  # DegCost

    def totals(self) -> dict[str, float]:
        return {
            "energy": float(self.energy.sum()),
            "reserve": float(self.reserve.sum()),
            "regCap": float(self.reg_cap.sum()),
            "regMileage": float(self.reg_mileage.sum()),
            "degradation": float(self.degradation_cost.sum()),
        }

    @property
    def revenue(self) -> float:
        return float(self.energy.sum() + self.reserve.sum() + self.reg_cap.sum() + self.reg_mileage.sum())

    @property
    def profit(self) -> float:
        return self.revenue - float(self.degradation_cost.sum())


def compute_revenue(result: ClearingResult, battery_id: str) -> RevenueBreakdown:
    i = result.battery_index(battery_id)
    bt = result.model.batteries[i]
    dt = result.model.dt
    n = result.model.bus_index()[bt.bus]
    net = result.battery["energyDischarge"][i] - result.battery["energyCharge"][i]
    return RevenueBreakdown(
        battery_id,
        energy=result.lmp[n] * net * dt,
        reserve=result.mcp["reserve"] * result.battery["reserve"][i] * dt,
        reg_cap=result.mcp["regCap"] * result.battery["regCap"][i] * dt,
        reg_mileage=result.mcp["regMileage"] * bt.perf_score * result.battery["regMileage"][i] * dt,
        degradation_cost=np.zeros(result.model.T),
    )


# --------------------------------------------------------------------------
# CSV output


def write_schedule_csv(result: ClearingResult, path) -> None:
    m = result.model
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "unit", "kind", "product", "mw"])
        for t in range(m.T):
            for gi, g in enumerate(m.generators):
                for p in GEN_PRODUCTS:
                    w.writerow([t, g.id, "generator", p, f"{result.gen[p][gi, t]:.6f}"])
            for bi, b in enumerate(m.batteries):
                for p in PRODUCTS:
                    w.writerow([t, b.id, "battery", p, f"{result.battery[p][bi, t]:.6f}"])


def write_price_csv(result: ClearingResult, path) -> None:
    m = result.model
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "location", "product", "price"])
        for t in range(m.T):
            for ni, bus in enumerate(m.buses):
                w.writerow([t, bus.id, "energy", f"{result.lmp[ni, t]:.6f}"])
            for p in ANCILLARY:
                w.writerow([t, "system", p, f"{result.mcp[p][t]:.6f}"])


def write_flow_csv(result: ClearingResult, path) -> None:
    m = result.model
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "line", "flow_mw", "limit_mw"])
        for t in range(m.T):
            for li, ln in enumerate(m.lines):
                w.writerow([t, ln.id, f"{result.flows[li, t]:.6f}", f"{ln.thermal_limit:.6f}"])


def offers_from_arrays(model: SystemModel, quantity: dict[str, np.ndarray], price: dict[str, np.ndarray]) -> OfferSet:
    """Build an :class:`OfferSet` from (B, T) arrays keyed by product."""
    from .model import BatteryOffers

    out = {}
    for bi, b in enumerate(model.batteries):
        out[b.id] = BatteryOffers({p: np.asarray(quantity[p][bi], dtype=float).copy() for p in PRODUCTS},
                                  {p: np.asarray(price[p][bi], dtype=float).copy() for p in PRODUCTS})
    return OfferSet(out)


def check_flow_limits(result: ClearingResult, tol: float = 1e-6) -> list[str]:
    bad = []
    for li, ln in enumerate(result.model.lines):
        over = np.flatnonzero(np.abs(result.flows[li]) > ln.thermal_limit + tol)
        bad += [f"line {ln.id} interval {t}: |flow| {abs(result.flows[li, t]):.3f} > {ln.thermal_limit}" for t in over]
    return bad


def write_clearing_outputs(result: ClearingResult, outdir) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_schedule_csv(result, out / "schedule.csv")
    write_price_csv(result, out / "prices.csv")
    write_flow_csv(result, out / "flows.csv")
