"""Strategic battery offers over the clearing LP, as a single-level MILP.

The owner's problem (upper level) chooses quantity and price offers per
product and interval.  The clearing LP (lower level) is replaced by its KKT
system:

* primal feasibility of every clearing row, with offer quantities on the
  right-hand side of the offer rows;
* stationarity ``c(lambda) - A^T pi - sigma = 0`` where ``sigma >= 0`` only
  exists for sign-restricted columns and ``c`` is linear in the price offers;
* complementarity ``slack * pi = 0`` and ``y * sigma = 0`` through one binary
  per pair and data-derived big-M constants.

The bilinear market revenue sum(price x quantity) is replaced using strong
duality.  For a KKT point, the total battery revenue equals
``b_fix^T pi - c_gen^T y_gen``: the offer rows (whose right-hand side is the
offer) drop out by complementarity and the mileage coupling rows have zero
right-hand side.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .clearing import (
    PRODUCT_SIGN,
    ClearingLP,
    ClearingResult,
    RevenueBreakdown,
    _degenerate,
    _slack_paths,
    build_clearing_lp,
    compute_revenue,
    offers_from_arrays,
    result_from_solution,
    solve_clearing,
)
from .degradation import CycleLifeCurve, PWLSegments
from .model import PRODUCTS, OfferSet, SystemModel
from .solver import LinearProgram, MipResult, solve_mip
from .solver.external import write_mps

MARKETS = ("energy", "reserve", "regCap", "regMileage")
MARKET_PRODUCTS = {
    "energy": ("energyDischarge", "energyCharge"),
    "reserve": ("reserve",),
    "regCap": ("regCap",),
    "regMileage": ("regMileage",),
}
DUAL_HIT = 1e-6  # relative distance to M that counts as binding


class BilevelError(RuntimeError):
    def __init__(self, status, message, detail=None):
        super().__init__(message)
        self.status = status
        self.detail = detail


@dataclass
class UlpSpec:
    markets: frozenset = frozenset(MARKETS)
    degradation: bool = False
    segments: int = 10
    life_exponent: float = 2.0
    day_end_equality: bool = True
    price_cap: float | None = None  # default: 2 x max generator energy offer
    tie_break: float = 1e-6  # weight of the secondary "fewest offered MW" objective
    dual_factor: float | None = None  # big-M multiplier on price_cap * dt
    # ceiling on published energy/ancillary prices ($/MWh); default network factor x price_cap.
    # It only binds when a battery is pivotal and the clearing duals are unbounded.
    market_price_cap: float | None = None

    def __post_init__(self):
        self.markets = frozenset(self.markets)
        unknown = self.markets - set(MARKETS)
        if unknown:
            raise ValueError(f"unknown markets {sorted(unknown)}")
        if not self.markets:
            raise ValueError("no enabled market: at least one of energy/reserve/regCap/regMileage is required")
        if self.segments < 1:
            raise ValueError("segment count must be >= 1")

    @property
    def products(self) -> tuple[str, ...]:
        return tuple(p for m in MARKETS if m in self.markets for p in MARKET_PRODUCTS[m])


# --------------------------------------------------------------------------
# model assembly


class _Vars:
    def __init__(self):
        self.lb: list[np.ndarray] = []
        self.ub: list[np.ndarray] = []
        self.integer: list[np.ndarray] = []
        self.names: list[str] = []
        self.n = 0

    def add(self, name, shape, lb=0.0, ub=np.inf, integer=False):
        size = int(np.prod(shape))
        idx = np.arange(self.n, self.n + size).reshape(shape)
        self.n += size
        self.lb.append(np.broadcast_to(np.asarray(lb, dtype=float), shape).ravel().copy())
        self.ub.append(np.broadcast_to(np.asarray(ub, dtype=float), shape).ravel().copy())
        self.integer.append(np.full(size, integer))
        self.names += [f"{name}{list(ix)}" for ix in np.ndindex(*shape)] if shape else [name]
        return idx


class _Rows:
    def __init__(self):
        self.ri: list[int] = []
        self.ci: list[int] = []
        self.v: list[float] = []
        self.sense: list[str] = []
        self.rhs: list[float] = []
        self.names: list[str] = []
        self.tag: list[str] = []

    def add(self, name, cols, vals, sense, rhs, tag):
        r = len(self.rhs)
        for j, a in zip(cols, vals):
            if a != 0.0:
                self.ri.append(r)
                self.ci.append(int(j))
                self.v.append(float(a))
        self.sense.append(sense)
        self.rhs.append(float(rhs))
        self.names.append(name)
        self.tag.append(tag)
        return r


@dataclass
class ComplementarityPair:
    kind: str  # "row" or "column"
    index: int  # clearing row or column
    binary: int  # MILP column of the binary (-1 if the pair needs none)
    m_primal: float
    m_dual: float


@dataclass
class MilpProgram:
    lp: LinearProgram  # sense max
    binaries: np.ndarray
    clp: ClearingLP
    spec: UlpSpec
    y: np.ndarray  # clearing primal columns
    pi: np.ndarray  # clearing duals (per clearing row)
    sigma: np.ndarray  # reduced costs, -1 for free/removed columns
    q: dict[str, np.ndarray]  # product -> (B, T)
    lam: dict[str, np.ndarray]
    soc: np.ndarray  # (B, T+1)
    mode: np.ndarray  # (B, T) discharge/charge exclusivity binary
    seg_e: np.ndarray | None  # (B, J, T+1)
    seg_w: np.ndarray | None  # (B, J, T)
    seg_v: np.ndarray | None
    pwl: PWLSegments | None
    pairs: list[ComplementarityPair]
    dual_bound: np.ndarray  # per clearing row
    revenue_c: np.ndarray  # objective without degradation and tie-break terms
    degradation_c: np.ndarray
    penalty_c: np.ndarray
    row_tags: list[str]
    removed_cols: np.ndarray  # clearing columns fixed at zero (disabled products)
    price_ceiling: float = math.inf  # bound on |pi| of balance and requirement rows ($)
    priced_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, int))

    @property
    def num_binaries(self) -> int:
        return int(self.binaries.size)

    def export_mps(self, path) -> None:
        write_mps(self.lp, path, integer=self.binaries, name="BILEVEL")


def price_cap(model: SystemModel) -> float:
    return 2.0 * max(float(np.max(g.energy_price_offer)) for g in model.generators)


def _network_factor(model: SystemModel) -> float:
    if len(model.buses) <= 1:
        return 1.0
    depth = max(len(p) for p in _slack_paths(model).values())
    return float(depth + 1)


def _column_bounds(clp: ClearingLP, qmax: dict[str, np.ndarray], removed: np.ndarray):
    """Box on every clearing column implied by the clearing constraints."""
    m = clp.model
    n = clp.num_vars
    lo = np.where(clp.nonneg, 0.0, -np.inf)
    hi = np.full(n, np.inf)
    for gi, g in enumerate(m.generators):
        rng = g.p_max - g.p_min
        lo[clp.gen_idx["energy"][gi]] = g.p_min
        hi[clp.gen_idx["energy"][gi]] = g.p_max
        hi[clp.gen_idx["reserve"][gi]] = rng
        hi[clp.gen_idx["regCap"][gi]] = rng
        hi[clp.gen_idx["regMileage"][gi]] = m.mileage_multiplier * rng
    for p in PRODUCTS:
        hi[clp.bat_idx[p].ravel()] = qmax[p].ravel()
    hi[removed] = 0.0
    for li, ln in enumerate(m.lines):
        lo[clp.flow_idx[li]] = -ln.thermal_limit
        hi[clp.flow_idx[li]] = ln.thermal_limit
    if len(m.buses) > 1:
        paths = _slack_paths(m)
        for ni, bus in enumerate(m.buses):
            reach = sum(m.lines[k].thermal_limit * m.lines[k].reactance for k in paths[bus.id])
            cols = clp.theta_idx[ni][clp.theta_idx[ni] >= 0]
            lo[cols] = -reach
            hi[cols] = reach
    return lo, hi


def _interval_dot(a_idx, a_val, lo, hi):
    """Max of sum a_k y_k over the box [lo, hi]."""
    v = np.where(a_val > 0, a_val * hi[a_idx], a_val * lo[a_idx])
    return float(v.sum())


def _product_limits(model: SystemModel) -> dict[str, np.ndarray]:
    B, T = len(model.batteries), model.T
    out = {}
    for p in PRODUCTS:
        lim = []
        for b in model.batteries:
            if p == "energyCharge":
                lim.append(b.charge_limit)
            elif p == "regCap":
                lim.append(min(b.charge_limit, b.discharge_limit))
            elif p == "regMileage":
                lim.append(model.mileage_multiplier * min(b.charge_limit, b.discharge_limit))
            else:
                lim.append(b.discharge_limit)
        out[p] = np.repeat(np.asarray(lim, dtype=float)[:, None], T, axis=1).reshape(B, T)
    return out


def reformulate_kkt(model: SystemModel, spec: UlpSpec, dual_factor: float | None = None) -> MilpProgram:
    """Build the single-level MILP for ``spec`` on ``model``."""
    clp = build_clearing_lp(model)
    T, dt = model.T, model.dt
    B = len(model.batteries)
    cap = spec.price_cap if spec.price_cap is not None else price_cap(model)
    kappa = dual_factor or spec.dual_factor or 2.0 * _network_factor(model)
    n, mrows = clp.num_vars, clp.num_rows
    A = clp.A.tocsr()
    AT = clp.A.tocsc()

    enabled = set(spec.products)
    qmax = _product_limits(model)
    for p in PRODUCTS:
        if p not in enabled:
            qmax[p] = np.zeros_like(qmax[p])
    removed = np.concatenate([clp.bat_idx[p].ravel() for p in PRODUCTS if p not in enabled] or [np.zeros(0, int)])
    removed_mask = np.zeros(n, dtype=bool)
    removed_mask[removed] = True
    removed_rows = np.zeros(mrows, dtype=bool)
    offer_mask = np.zeros(mrows, dtype=bool)
    for p in PRODUCTS:
        offer_mask[clp.offer_row[p].ravel()] = True
    # the rating rows are implied by the offer-level coupling below, so their duals are zero
    rating_rows = clp.coupling_rows.ravel()
    for p in PRODUCTS:
        if p not in enabled:
            removed_rows[clp.offer_row[p].ravel()] = True
    ylo, yhi = _column_bounds(clp, qmax, removed)

    V = _Vars()
    y = V.add("y", (n,), ylo, yhi)
    mdual = np.full(mrows, kappa * cap * dt)
    pilo = np.where(clp.is_eq, -mdual, 0.0)
    pihi = mdual.copy()
    pilo[removed_rows] = 0.0
    pihi[removed_rows] = 0.0
    pilo[rating_rows] = 0.0
    pihi[rating_rows] = 0.0
    ceiling = (spec.market_price_cap if spec.market_price_cap is not None
               else _network_factor(model) * cap) * dt
    priced = np.concatenate([clp.balance_row.ravel()] + [r.ravel() for r in clp.req_row.values()])
    pihi[priced] = np.minimum(pihi[priced], ceiling)
    pilo[priced] = np.maximum(pilo[priced], -ceiling)
    pi = V.add("pi", (mrows,), pilo, pihi)

    # reduced-cost bounds from the dual box
    col_of = {}
    for p in PRODUCTS:
        for bi in range(B):
            for t in range(T):
                col_of[int(clp.bat_idx[p][bi, t])] = (p, bi, t)
    sig_hi = np.zeros(n)
    for k in range(n):
        s, e = AT.indptr[k], AT.indptr[k + 1]
        rows, vals = AT.indices[s:e], AT.data[s:e]
        cmax = cap * dt if k in col_of and PRODUCT_SIGN[col_of[k][0]] > 0 else max(clp.c[k], 0.0)
        # sigma = c - a^T pi; maximise over the pi box
        sig_hi[k] = cmax + _interval_dot(rows, -vals, pilo, pihi)
    sig_cols = np.flatnonzero(clp.nonneg & ~removed_mask)
    sigma = np.full(n, -1)
    sigma[sig_cols] = V.add("sigma", (sig_cols.size,), 0.0, np.maximum(sig_hi[sig_cols], 0.0))

    q = {p: V.add(f"q_{p}", (B, T), 0.0, qmax[p]) for p in PRODUCTS}
    lam_hi = {p: np.full((B, T), cap if p in enabled else 0.0) for p in PRODUCTS}
    lam = {p: V.add(f"price_{p}", (B, T), 0.0, lam_hi[p]) for p in PRODUCTS}
    soc_lo = np.array([[b.soc_min] * (T + 1) for b in model.batteries]).reshape(B, T + 1)
    soc_hi = np.array([[b.soc_max] * (T + 1) for b in model.batteries]).reshape(B, T + 1)
    for bi, b in enumerate(model.batteries):
        soc_lo[bi, 0] = soc_hi[bi, 0] = b.soc_initial
    soc = V.add("soc", (B, T + 1), soc_lo, soc_hi)
    mode = V.add("discharging", (B, T), 0.0, 1.0, integer=True)

    R = _Rows()
    # -- lower level primal feasibility
    for r in range(mrows):
        if removed_rows[r]:
            continue
        s, e = A.indptr[r], A.indptr[r + 1]
        cols = list(y[A.indices[s:e]])
        vals = list(A.data[s:e])
        rhs = clp.b[r]
        if offer_mask[r]:
            p, bi, t = col_of[int(A.indices[s])]
            cols.append(q[p][bi, t])
            vals.append(1.0)
            rhs = 0.0
        R.add(clp.row_names[r], cols, vals, "E" if clp.is_eq[r] else "G", rhs, "llp-primal")
    # -- stationarity
    for k in range(n):
        if removed_mask[k]:
            continue
        s, e = AT.indptr[k], AT.indptr[k + 1]
        rows = AT.indices[s:e]
        keep = ~removed_rows[rows]
        cols = list(pi[rows[keep]])
        vals = list(-AT.data[s:e][keep])
        rhs = -clp.c[k]
        if k in col_of:
            p, bi, t = col_of[k]
            cols.append(lam[p][bi, t])
            vals.append(PRODUCT_SIGN[p] * dt)
            rhs = 0.0
        if sigma[k] >= 0:
            cols.append(sigma[k])
            vals.append(-1.0)
        R.add(f"stat[{clp.col_names[k]}]", cols, vals, "E", rhs, "llp-dual")

    # -- complementarity
    pairs: list[ComplementarityPair] = []
    rating_mask = np.zeros(mrows, dtype=bool)
    rating_mask[rating_rows] = True
    nbin_rows = [r for r in range(mrows) if not clp.is_eq[r] and not removed_rows[r] and not rating_mask[r]]
    slack_m = {}
    for r in nbin_rows:
        s, e = A.indptr[r], A.indptr[r + 1]
        if offer_mask[r]:
            p, bi, t = col_of[int(A.indices[s])]
            slack_m[r] = float(qmax[p][bi, t])
        else:
            slack_m[r] = _interval_dot(A.indices[s:e], A.data[s:e], ylo, yhi) - clp.b[r]
        if not math.isfinite(slack_m[r]):
            raise BilevelError("big-M", f"no finite slack bound for clearing row {clp.row_names[r]}")
    need = [r for r in nbin_rows if slack_m[r] > 1e-9]
    ub_rows = V.add("u_row", (len(need),), 0.0, 1.0, integer=True) if need else np.zeros(0, int)
    for r in nbin_rows:
        if slack_m[r] <= 1e-9:
            pairs.append(ComplementarityPair("row", r, -1, slack_m[r], mdual[r]))
    for u, r in zip(ub_rows, need):
        s, e = A.indptr[r], A.indptr[r + 1]
        Ms, Md = slack_m[r], mdual[r]
        cols = list(y[A.indices[s:e]])
        vals = list(A.data[s:e])
        rhs = Ms + clp.b[r]
        if offer_mask[r]:
            p, bi, t = col_of[int(A.indices[s])]
            cols.append(q[p][bi, t])
            vals.append(1.0)
            rhs = Ms
        R.add(f"cs_slack[{clp.row_names[r]}]", cols + [u], vals + [Ms], "L", rhs, "complementarity")
        R.add(f"cs_dual[{clp.row_names[r]}]", [pi[r], u], [1.0, -Md], "L", 0.0, "complementarity")
        pairs.append(ComplementarityPair("row", r, int(u), Ms, Md))
    cneed = [k for k in sig_cols if yhi[k] > 1e-9]
    vb = V.add("u_col", (len(cneed),), 0.0, 1.0, integer=True) if cneed else np.zeros(0, int)
    for v, k in zip(vb, cneed):
        My, Msig = float(yhi[k]), float(max(sig_hi[k], 0.0))
        if not math.isfinite(My) or not math.isfinite(Msig):
            raise BilevelError("big-M", f"no finite bound for clearing column {clp.col_names[k]}")
        R.add(f"cs_col[{clp.col_names[k]}]", [y[k], v], [1.0, -My], "L", 0.0, "complementarity")
        R.add(f"cs_rc[{clp.col_names[k]}]", [sigma[k], v], [1.0, Msig], "L", Msig, "complementarity")
        pairs.append(ComplementarityPair("column", int(k), int(v), My, Msig))

    # -- upper level operating constraints
    mm = model.mileage_multiplier
    for bi, b in enumerate(model.batteries):
        for t in range(T):
            R.add(f"headroom[{b.id},{t}]", [q["energyDischarge"][bi, t], q["reserve"][bi, t], q["regCap"][bi, t]],
                  [1, 1, 1], "L", b.discharge_limit, "ulp")
            R.add(f"footroom[{b.id},{t}]", [q["energyCharge"][bi, t], q["regCap"][bi, t]], [1, 1], "L",
                  b.charge_limit, "ulp")
            R.add(f"mode_dis[{b.id},{t}]", [q["energyDischarge"][bi, t], mode[bi, t]], [1, -b.discharge_limit], "L",
                  0.0, "ulp")
            R.add(f"mode_ch[{b.id},{t}]", [q["energyCharge"][bi, t], mode[bi, t]], [1, b.charge_limit], "L",
                  b.charge_limit, "ulp")
            R.add(f"mileage_offer[{b.id},{t}]", [q["regMileage"][bi, t], q["regCap"][bi, t]], [1, -mm], "L", 0.0,
                  "ulp")

    pwl = seg_e = seg_w = seg_v = None
    deg_c = np.zeros(0)
    if spec.degradation:
        J = spec.segments
        pwl_list = [PWLSegments.build(b, J, CycleLifeCurve.for_battery(b, spec.life_exponent)) for b in model.batteries]
        pwl = pwl_list[0] if pwl_list else None
        e_lo = np.zeros((B, J, T + 1))
        e_hi = np.zeros((B, J, T + 1))
        for bi, b in enumerate(model.batteries):
            e_hi[bi] = pwl_list[bi].segment_energy
            fill = pwl_list[bi].initial_fill(b.soc_initial)
            e_lo[bi, :, 0] = e_hi[bi, :, 0] = fill
        seg_e = V.add("seg_energy", (B, J, T + 1), e_lo, e_hi)
        seg_w = V.add("seg_out", (B, J, T), 0.0, np.inf)
        seg_v = V.add("seg_in", (B, J, T), 0.0, np.inf)
        deg_c = np.zeros((B, J, T))
        for bi, b in enumerate(model.batteries):
            deg_c[bi] = pwl_list[bi].costs[:, None]
    sh = model.horizon.agc_step_hours
    for bi, b in enumerate(model.batteries):
        ec, ed = b.efficiency_charge, b.efficiency_discharge
        d_col = y[clp.bat_idx["energyDischarge"][bi]]
        c_col = y[clp.bat_idx["energyCharge"][bi]]
        r_col = y[clp.bat_idx["reserve"][bi]]
        g_col = y[clp.bat_idx["regCap"][bi]]
        m_col = y[clp.bat_idx["regMileage"][bi]]
        for t in range(T):
            if spec.degradation:
                J = spec.segments
                x = 0.5 * sh  # AGC throughput per MW of scheduled mileage, MWh
                R.add(f"seg_out_sum[{b.id},{t}]", list(seg_w[bi, :, t]) + [d_col[t], m_col[t]],
                      [1.0] * J + [-dt / ed, -x / ed], "E", 0.0, "degradation")
                R.add(f"seg_in_sum[{b.id},{t}]", list(seg_v[bi, :, t]) + [c_col[t], m_col[t]],
                      [1.0] * J + [-ec * dt, -ec * x], "E", 0.0, "degradation")
                for j in range(J):
                    R.add(f"seg_balance[{b.id},{j},{t}]",
                          [seg_e[bi, j, t + 1], seg_e[bi, j, t], seg_v[bi, j, t], seg_w[bi, j, t]],
                          [1.0, -1.0, -1.0, 1.0], "E", 0.0, "degradation")
                R.add(f"soc_def[{b.id},{t + 1}]", [soc[bi, t + 1]] + list(seg_e[bi, :, t + 1]), [1.0] + [-1.0] * J,
                      "E", 0.0, "soc")
            else:
                R.add(f"soc_rec[{b.id},{t + 1}]", [soc[bi, t + 1], soc[bi, t], c_col[t], d_col[t]],
                      [1.0, -1.0, -ec * dt, dt / ed], "E", 0.0, "soc")
            # enough stored energy to honour the interval's awards
            R.add(f"soc_cover_dis[{b.id},{t}]", [soc[bi, t], d_col[t], r_col[t], g_col[t]],
                  [1.0, -dt / ed, -dt / ed, -dt / ed], "G", b.soc_min, "soc")
            R.add(f"soc_cover_ch[{b.id},{t}]", [soc[bi, t], c_col[t], g_col[t]], [1.0, ec * dt, ec * dt], "L",
                  b.soc_max, "soc")
        if spec.day_end_equality:
            R.add(f"day_end[{b.id}]", [soc[bi, T]], [1.0], "E", b.soc_initial, "soc")

    # -- objective
    nv = V.n
    rev = np.zeros(nv)
    fixed_rows = ~offer_mask & ~removed_rows
    rev[pi[fixed_rows]] += clp.b[fixed_rows]
    gcols = np.flatnonzero(clp.gen_cost_mask)
    rev[y[gcols]] -= clp.c[gcols]
    degc = np.zeros(nv)
    if spec.degradation:
        degc[seg_w.ravel()] = deg_c.ravel()
    pen = np.zeros(nv)
    if spec.tie_break > 0:
        for p in enabled:
            pen[q[p].ravel()] += spec.tie_break * dt
            # push sell prices down and the charge bid up, away from ties with the margin
            pen[lam[p].ravel()] += spec.tie_break * dt * (1.0 if PRODUCT_SIGN[p] > 0 else -1.0)
            # offer-row duals are undetermined when the offer is idle; keep them at their smallest value
            pen[pi[clp.offer_row[p].ravel()]] += spec.tie_break

    lb = np.concatenate(V.lb)
    ub = np.concatenate(V.ub)
    integer = np.concatenate(V.integer)
    M = sp.csr_matrix((R.v, (R.ri, R.ci)), shape=(len(R.rhs), nv))
    sense = np.array(R.sense)
    rhs = np.array(R.rhs)
    le, ge, eq = sense == "L", sense == "G", sense == "E"
    A_ub = sp.vstack([M[le], -M[ge]]).tocsr()
    b_ub = np.concatenate([rhs[le], -rhs[ge]])
    names_ub = [n_ for n_, s_ in zip(R.names, sense) if s_ == "L"] + [n_ for n_, s_ in zip(R.names, sense) if s_ == "G"]
    names_eq = [n_ for n_, s_ in zip(R.names, sense) if s_ == "E"]
    lp = LinearProgram(rev - degc - pen, A_ub, b_ub, M[eq].tocsr(), rhs[eq], lb, ub, "max", V.names, names_ub, names_eq)
    tags = [t_ for t_, s_ in zip(R.tag, sense) if s_ == "L"] + [t_ for t_, s_ in zip(R.tag, sense) if s_ == "G"]
    tags += [t_ for t_, s_ in zip(R.tag, sense) if s_ == "E"]
    return MilpProgram(lp, np.flatnonzero(integer), clp, spec, y, pi, sigma, q, lam, soc, mode, seg_e, seg_w, seg_v,
                       pwl, pairs, mdual, rev, degc, pen, tags, removed, ceiling, priced)


# --------------------------------------------------------------------------
# solving and audits


@dataclass
class BigMAudit:
    dual_factor: float
    escalations: int
    max_dual_ratio: float  # max |pi| / M over rows
    max_rc_ratio: float  # max sigma / M over columns
    binding: list[str] = field(default_factory=list)
    at_price_ceiling: list[str] = field(default_factory=list)  # informational, never escalated

    @property
    def ok(self) -> bool:
        return not self.binding


@dataclass
class SolveReport:
    status: str  # optimal | time_limit | infeasible | error
    spec: UlpSpec
    offers: OfferSet | None = None
    clearing: ClearingResult | None = None
    revenue: dict[str, RevenueBreakdown] = field(default_factory=dict)
    objective: float = math.nan  # revenue - degradation, $
    milp_objective: float = math.nan
    bound: float = math.nan
    gap: float = math.inf
    soc: np.ndarray | None = None  # (B, T+1)
    segment_out: np.ndarray | None = None  # (B, J, T) MWh withdrawn per segment
    big_m: BigMAudit | None = None
    complementarity: float = math.nan
    decomposition_error: float = math.nan
    round_trip: dict = field(default_factory=dict)
    num_binaries: int = 0
    solve_seconds: float = 0.0
    message: str = ""
    program: MilpProgram | None = None

    @property
    def profit(self) -> float:
        return self.objective

    @property
    def has_solution(self) -> bool:
        return self.offers is not None


def _audit_big_m(prog: MilpProgram, z: np.ndarray, factor: float) -> BigMAudit:
    pi = z[prog.pi]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(prog.dual_bound > 0, np.abs(pi) / prog.dual_bound, 0.0)
    binding = [prog.clp.row_names[r] for r in np.flatnonzero(ratio >= 1 - DUAL_HIT)]
    rc_ratio = 0.0
    for pair in prog.pairs:
        if pair.kind == "column" and pair.m_dual > 0:
            val = z[prog.sigma[pair.index]] / pair.m_dual
            rc_ratio = max(rc_ratio, val)
            if val >= 1 - DUAL_HIT:
                binding.append(f"reduced cost of {prog.clp.col_names[pair.index]}")
    ceil = [prog.clp.row_names[r] for r in prog.priced_rows
            if abs(pi[r]) >= (1 - DUAL_HIT) * prog.price_ceiling]
    return BigMAudit(factor, 0, float(ratio.max(initial=0.0)), float(rc_ratio), binding, ceil)


def _offers(prog: MilpProgram, z: np.ndarray) -> OfferSet:
    qa = {p: np.clip(z[prog.q[p]], 0.0, None) for p in PRODUCTS}
    la = {p: np.clip(z[prog.lam[p]], 0.0, None) for p in PRODUCTS}
    return offers_from_arrays(prog.clp.model, qa, la)


def _complementarity(prog: MilpProgram, z: np.ndarray, offers: OfferSet) -> float:
    """Worst min(slack, dual) over all pairs."""
    clp = prog.clp
    yv = z[prog.y]
    piv = z[prog.pi]
    b = clp.b.copy()
    for p in PRODUCTS:
        for bi, bt in enumerate(clp.model.batteries):
            b[clp.offer_row[p][bi]] = -offers[bt.id].quantity[p]
    slack = clp.A @ yv - b
    worst = 0.0
    for pair in prog.pairs:
        if pair.kind == "row":
            worst = max(worst, min(abs(slack[pair.index]), abs(piv[pair.index])))
        else:
            worst = max(worst, min(abs(yv[pair.index]), abs(z[prog.sigma[pair.index]])))
    return worst


def _round_trip(prog: MilpProgram, offers: OfferSet, induced: ClearingResult, backend: str) -> dict:
    """Re-clear the market standalone at the chosen offers and compare."""
    model = prog.clp.model
    clp = build_clearing_lp(model, offers, check_offers=False)
    try:
        alone = solve_clearing(clp, backend=backend)
    except Exception as exc:  # noqa: BLE001 - reported, not raised
        return {"status": "failed", "message": str(exc)}
    sched = max(float(np.max(np.abs(alone.battery[p] - induced.battery[p]), initial=0.0)) for p in PRODUCTS)
    sched = max(sched, max(float(np.max(np.abs(alone.gen[p] - induced.gen[p]), initial=0.0)) for p in alone.gen))
    price = float(np.max(np.abs(alone.lmp - induced.lmp), initial=0.0))
    price = max(price, max(float(np.max(np.abs(alone.mcp[p] - induced.mcp[p]), initial=0.0)) for p in alone.mcp))
    obj_gap = abs(alone.objective - float(clp.c @ induced.y)) / max(1.0, abs(alone.objective))
    # is the MILP's pair itself an optimal primal-dual pair of the standalone LP?
    y, pi = induced.y, induced.duals
    feas = float(np.max(np.where(clp.is_eq, np.abs(clp.A @ y - clp.b), np.maximum(clp.b - clp.A @ y, 0.0))))
    rc = clp.c - clp.A.T @ pi
    dual_feas = float(max(np.max(np.maximum(-rc[clp.nonneg], 0.0), initial=0.0),
                          np.max(np.abs(rc[~clp.nonneg]), initial=0.0),
                          np.max(np.maximum(-pi[~clp.is_eq], 0.0), initial=0.0)))
    scale = max(1.0, float(np.max(np.abs(clp.c))))
    certified = feas <= 1e-6 * max(1.0, float(np.max(np.abs(clp.b)))) and dual_feas <= 1e-6 * scale and obj_gap <= 1e-6
    if sched <= 1e-6 and price <= 1e-6:
        status = "identical"
    elif certified:
        status = "degenerate-tie"  # equally optimal schedules/prices; the MILP's pair is certified optimal
    else:
        status = "mismatch"
    out = {"status": status, "max_schedule_diff": sched, "max_price_diff": price, "objective_gap": obj_gap,
           "primal_violation": feas, "dual_violation": dual_feas, "degenerate": bool(alone.degenerate)}
    if status == "degenerate-tie":
        out["nudged_schedule_diff"] = _nudged_diff(model, offers, induced, backend)
    return out


def _nudged_diff(model, offers: OfferSet, induced: ClearingResult, backend: str, eps: float = 1e-3) -> float:
    """Battery schedule difference after breaking price ties in the battery's favour by ``eps`` $/MWh."""
    quantity = {p: np.array([offers[b.id].quantity[p] for b in model.batteries]) for p in PRODUCTS}
    price = {}
    for p in PRODUCTS:
        base = np.array([offers[b.id].price[p] for b in model.batteries])
        price[p] = np.maximum(base - eps, 0.0) if PRODUCT_SIGN[p] > 0 else base + eps
    try:
        alone = solve_clearing(build_clearing_lp(model, offers_from_arrays(model, quantity, price), check_offers=False),
                               backend=backend)
    except Exception:  # noqa: BLE001
        return math.inf
    return max(float(np.max(np.abs(alone.battery[p] - induced.battery[p]), initial=0.0)) for p in PRODUCTS)


def solve_bilevel(model: SystemModel, spec: UlpSpec, backend: str = "highs", time_limit: float = 600.0,
                  gap: float = 1e-4, round_trip: bool = True, clearing_backend: str = "highs",
                  max_escalations: int = 3, **solver_options) -> SolveReport:
    """Solve the strategic offer problem, enlarging dual big-Ms if any bind."""
    start = time.perf_counter()
    if not model.batteries:
        raise BilevelError("input", "model has no battery units")
    factor = spec.dual_factor or 2.0 * _network_factor(model)
    escalations = 0
    while True:
        prog = reformulate_kkt(model, spec, dual_factor=factor)
        remaining = max(1.0, time_limit - (time.perf_counter() - start))
        res: MipResult = solve_mip(prog.lp, prog.binaries, time_limit=remaining, gap_target=gap, backend=backend,
                                   **solver_options)
        if not res.has_incumbent:
            report = SolveReport(res.status, spec, gap=res.gap, num_binaries=prog.num_binaries,
                                 solve_seconds=time.perf_counter() - start, message=res.message, program=prog)
            if res.status == "infeasible":
                report.message = "bilevel MILP infeasible: " + _infeasibility_hint(model, spec)
            return report
        audit = _audit_big_m(prog, res.x, factor)
        audit.escalations = escalations
        if audit.ok or escalations >= max_escalations or res.status != "optimal":
            break
        escalations += 1
        factor *= 10.0

    z = res.x
    offers = _offers(prog, z)
    clp = prog.clp
    yv = z[prog.y].copy()
    piv = z[prog.pi].copy()
    # rebuild the clearing view with the chosen offer prices in the objective
    clp_priced = build_clearing_lp(model, offers, check_offers=False)
    _complete_removed_duals(clp_priced, prog.removed_cols, piv)
    induced = result_from_solution(clp_priced, yv, piv)
    induced.degenerate = _degenerate(clp_priced, yv, piv)
    revenue = {}
    B, T = len(model.batteries), model.T
    seg_out = None
    deg = np.zeros((B, T))
    if spec.degradation:
        seg_out = z[prog.seg_w]
        J = spec.segments
        for bi, b in enumerate(model.batteries):
            costs = PWLSegments.build(b, J, CycleLifeCurve.for_battery(b, spec.life_exponent)).costs
            deg[bi] = costs @ seg_out[bi]
    for bi, b in enumerate(model.batteries):
        rb = compute_revenue(induced, b.id)
        rb.degradation_cost = deg[bi]
        revenue[b.id] = rb
    total_profit = sum(r.profit for r in revenue.values())
    milp_value = float(prog.revenue_c @ z - prog.degradation_c @ z)
    decomp = abs(total_profit - milp_value) / max(1.0, abs(milp_value))
    report = SolveReport(
        status=res.status,
        spec=spec,
        offers=offers,
        clearing=induced,
        revenue=revenue,
        objective=total_profit,
        milp_objective=milp_value,
        bound=res.bound,
        gap=res.gap,
        soc=z[prog.soc],
        segment_out=seg_out,
        big_m=audit,
        complementarity=_complementarity(prog, z, offers),
        decomposition_error=decomp,
        num_binaries=prog.num_binaries,
        message=res.message,
        program=prog,
    )
    if round_trip:
        report.round_trip = _round_trip(prog, offers, induced, clearing_backend)
    report.solve_seconds = time.perf_counter() - start
    return report


def _complete_removed_duals(clp: ClearingLP, removed: np.ndarray, pi: np.ndarray) -> None:
    """Price the idle offer rows of disabled products so the dual is feasible for the full LP."""
    if removed.size == 0:
        return
    AT = clp.A.tocsc()
    row_of = {}
    for p in PRODUCTS:
        for r, k in zip(clp.offer_row[p].ravel(), clp.bat_idx[p].ravel()):
            row_of[int(k)] = int(r)
    for k in removed:
        r_off = row_of[int(k)]
        s, e = AT.indptr[k], AT.indptr[k + 1]
        rows, vals = AT.indices[s:e], AT.data[s:e]
        other = rows != r_off
        value = float(vals[other] @ pi[rows[other]])
        # stationarity: c_k - value + pi_off >= 0
        pi[r_off] = max(0.0, value - clp.c[k])


def _infeasibility_hint(model: SystemModel, spec: UlpSpec) -> str:
    hints = []
    for b in model.batteries:
        if not b.soc_min <= b.soc_initial <= b.soc_max:
            hints.append(f"battery {b.id}: initial SOC outside bounds (soc group)")
    try:
        solve_clearing(build_clearing_lp(model))
    except Exception as exc:  # noqa: BLE001
        hints.append(f"clearing without the battery fails: {exc}")
    return "; ".join(hints) if hints else "no single group identified (check requirement levels and SOC limits)"
