import numpy as np

from bessmarket.bilevel import UlpSpec
from bessmarket.clearing import ClearingError, build_clearing_lp, offers_from_arrays, solve_clearing
from bessmarket.datasets import toy_system
from bessmarket.model import PRODUCTS, BatteryUnit


def random_clearing_instance(rng: np.random.Generator, T: int = 4, max_buses: int = 6, max_gens: int = 8):
    """Random feasible-looking system with a small battery and random battery offers."""
    N = int(rng.integers(1, max_buses + 1))
    buses = tuple(str(i + 1) for i in range(N))
    lines = []
    for i in range(1, N):
        lines.append((buses[int(rng.integers(0, i))], buses[i], float(rng.uniform(0.05, 0.3)), float(rng.uniform(40, 250))))
    if N >= 3 and rng.random() < 0.5:
        a, b = rng.choice(N, 2, replace=False)
        lines.append((buses[a], buses[b], float(rng.uniform(0.05, 0.3)), float(rng.uniform(40, 250))))
    G = int(rng.integers(2, max_gens + 1))
    gens = []
    for _ in range(G):
        pmax = float(rng.uniform(50, 200))
        pmin = float(rng.choice([0.0, rng.uniform(0, 0.3 * pmax)]))
        gens.append((buses[int(rng.integers(0, N))], round(pmin, 3), round(pmax, 3),
                     np.round(rng.uniform(10, 50, T), 2).tolist()))
    cap = sum(g[2] for g in gens)
    load = {b: np.round(rng.uniform(0, 0.5, T) * cap / N, 3).tolist() for b in buses}
    bt = BatteryUnit("bess", buses[int(rng.integers(0, N))], 20.0, 20.0, 80.0, 8.0, 72.0, 40.0)
    model = toy_system(gens, load, battery=bt, reserve_req=np.round(rng.uniform(0, 0.05 * cap, T), 3),
                       reg_cap_req=np.round(rng.uniform(0, 0.03 * cap, T), 3), T=T, dt=0.25, buses=buses, lines=lines)
    quantity = {p: np.zeros((1, T)) for p in PRODUCTS}
    price = {p: np.zeros((1, T)) for p in PRODUCTS}
    split = rng.uniform(0, 1, (3, T))
    quantity["energyDischarge"][0] = np.round(10 * split[0], 3)
    quantity["reserve"][0] = np.round(5 * split[1], 3)
    quantity["regCap"][0] = np.round(5 * split[2], 3)
    quantity["regMileage"][0] = np.round(1.5 * quantity["regCap"][0], 3)
    quantity["energyCharge"][0] = np.round(15 * rng.uniform(0, 1, T), 3)
    for p in PRODUCTS:
        price[p][0] = np.round(rng.uniform(0, 60, T), 2)
    return model, offers_from_arrays(model, quantity, price)


def feasible_instances(seed: int, count: int, **kw):
    """Yield ``count`` (model, offers, clp, result) tuples that clear."""
    rng = np.random.default_rng(seed)
    made = 0
    while made < count:
        model, offers = random_clearing_instance(rng, **kw)
        clp = build_clearing_lp(model, offers)
        try:
            res = solve_clearing(clp)
        except ClearingError:
            continue
        made += 1
        yield model, offers, clp, res


def load_derivatives(model, offers, bus: int, t: int, eps: float = 1e-3):
    """One-sided derivatives of the clearing cost w.r.t. load at ``bus`` in ``t`` ($/MWh)."""
    base = solve_clearing(build_clearing_lp(model, offers)).objective
    out = []
    for sgn in (+1, -1):
        buses = list(model.buses)
        prof = list(buses[bus].load_profile)
        prof[t] += sgn * eps
        buses[bus] = type(buses[bus])(buses[bus].id, tuple(prof))
        m2 = model.replace(buses=tuple(buses))
        try:
            obj = solve_clearing(build_clearing_lp(m2, offers)).objective
        except ClearingError:
            out.append(np.inf * sgn)
            continue
        out.append(sgn * (obj - base) / (eps * model.dt))
    right, left = out
    return left, right


# --------------------------------------------------------------------------
# brute-force offer-grid oracle for one battery and one interval


def _grid(limit, step=1.0):
    return np.arange(0.0, np.floor(limit / step + 1e-9) * step + 0.5 * step, step)


def offer_grid_oracle(model, products, price_cap, step_mw=1.0, step_price=1.0):
    """Best owner profit over a discretised offer grid (T = 1, degradation off).

    Only the energy side chosen by the exclusivity switch is offered; every
    enabled ancillary product is enumerated jointly with it.
    """
    assert model.T == 1 and len(model.batteries) == 1
    bt = model.batteries[0]
    dt = model.dt
    prices = _grid(price_cap, step_price)
    anc = [p for p in ("reserve", "regCap") if p in products]
    best, best_offer = -np.inf, None
    sides = [s for s in ("energyDischarge", "energyCharge") if s in products] or [None]
    for side in sides:
        side_lim = bt.discharge_limit if side == "energyDischarge" else bt.charge_limit
        side_grid = _grid(side_lim, step_mw) if side else np.zeros(1)
        for qe in side_grid:
            for pe in (prices if side and qe > 0 else prices[:1]):
                combos = [({}, {})]
                for p in anc:
                    nxt = []
                    for qs, ps in combos:
                        used_dis = (qe if side == "energyDischarge" else 0.0) + sum(qs.values())
                        lim = bt.discharge_limit - used_dis
                        if p == "regCap":
                            lim = min(lim, bt.charge_limit - (qe if side == "energyCharge" else 0.0))
                        for q in _grid(max(lim, 0.0), step_mw):
                            for pr in (prices if q > 0 else prices[:1]):
                                nxt.append(({**qs, p: q}, {**ps, p: pr}))
                    combos = nxt
                for qs, ps in combos:
                    quantity = {p: np.zeros((1, 1)) for p in PRODUCTS}
                    price = {p: np.zeros((1, 1)) for p in PRODUCTS}
                    if side:
                        quantity[side][0, 0], price[side][0, 0] = qe, pe
                    for p in anc:
                        quantity[p][0, 0], price[p][0, 0] = qs[p], ps[p]
                    if "regMileage" in products and "regCap" in qs:
                        quantity["regMileage"][0, 0] = model.mileage_multiplier * qs["regCap"]
                    offers = offers_from_arrays(model, quantity, price)
                    try:
                        res = solve_clearing(build_clearing_lp(model, offers))
                    except ClearingError:
                        continue
                    d = res.battery["energyDischarge"][0, 0]
                    c = res.battery["energyCharge"][0, 0]
                    soc = bt.soc_initial - d * dt / bt.efficiency_discharge + c * dt * bt.efficiency_charge
                    if not bt.soc_min - 1e-9 <= soc <= bt.soc_max + 1e-9:
                        continue
                    n = model.bus_index()[bt.bus]
                    profit = res.lmp[n, 0] * (d - c) * dt
                    for p in ("reserve", "regCap", "regMileage"):
                        profit += res.mcp[p][0] * res.battery[p][0, 0] * dt * (bt.perf_score if p == "regMileage" else 1)
                    if profit > best + 1e-9:
                        best, best_offer = profit, (quantity, price)
    return best, best_offer


def grid_resolution(model, price_cap, products, step_mw=1.0, step_price=1.0):
    """Profit change bound for moving every offer by one grid cell."""
    bt = model.batteries[0]
    n = sum(1 for p in products if p != "regMileage")
    return n * (step_mw * price_cap + step_price * max(bt.discharge_limit, bt.charge_limit)) * model.dt


SMALL = BatteryUnit("bess", "1", 10, 10, 40, 5, 35, 20)
TINY = BatteryUnit("bess", "1", 4, 4, 16, 2, 14, 8)

# 1 generator (or a two-step supply), 1 battery, 1 interval
TOY_FAMILY = {
    "gen-marginal": ([("1", 100, 20.0)], 50, {}, ("energy",), SMALL),
    "battery-pivotal": ([("1", 45, 20.0)], 50, {}, ("energy",), SMALL),
    "min-output-binds": ([("1", 40, 100, 20.0)], 45, {}, ("energy",), SMALL),
    "two-step-supply": ([("1", 60, 10.0), ("1", 100, 18.0)], 65, {}, ("energy",), SMALL),
    "with-reserve": ([("1", 100, 5.0)], 50, {"reserve_req": 20.0}, ("energy", "reserve"), TINY),
}


def toy(name):
    gens, load, req, markets, bt = TOY_FAMILY[name]
    return toy_system(gens, load, battery=bt, **req), UlpSpec(markets, day_end_equality=False)


# --------------------------------------------------------------------------
# acceptance summary

ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
