"""Bundled synthetic test systems.

``rts-area3-synthetic`` mimics the third area of the RTS-GMLC network: 25
buses, 39 lines, 26 generators and the battery on bus 313, over 96
fifteen-minute intervals with load between 1285 and 2345 MW (valley hours
1-6, peak hours 11-18).  Generator cost data and exact profiles of the
original are not public, so costs are synthetic; the merit order is laid
out so that valley, shoulder and peak prices are clearly separated.

``rts-area3-reduced`` is a 6-bus / 24-hour aggregate of the same system,
sized for the embedded solvers and used by the acceptance suite.

The JSON files under ``data/`` are produced by :func:`write_bundled`.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .model import (
    BatteryUnit,
    Bus,
    Generator,
    Horizon,
    SystemModel,
    SystemRequirements,
    TransmissionLine,
    build_default_offers,
    load_system,
    save_system,
)

# hour-beginning load of the area (MW), hours 1..24
HOURLY_LOAD = np.array([
    1330, 1300, 1285, 1290, 1310, 1360, 1500, 1680, 1850, 2000, 2150, 2250,
    2300, 2345, 2340, 2320, 2260, 2180, 2050, 1950, 1850, 1700, 1550, 1420,
], dtype=float)

RESERVE_SHARE = 0.05
REGCAP_SHARE = 0.03
MILEAGE_RATIO = 1.5

# RTS-24 load shares by bus number
LOAD_SHARE = {1: 3.8, 2: 3.4, 3: 6.3, 4: 2.6, 5: 2.5, 6: 4.8, 7: 4.4, 8: 6.0, 9: 6.1, 10: 6.8,
              13: 9.3, 14: 6.8, 15: 11.1, 16: 3.5, 18: 11.7, 19: 6.4, 20: 4.5}

# (from, to, reactance p.u., rating MW) -- RTS-24 branch data plus the area's 25th bus
RTS_BRANCHES = [
    (1, 2, 0.0139, 175), (1, 3, 0.2112, 175), (1, 5, 0.0845, 175), (2, 4, 0.1267, 175),
    (2, 6, 0.1920, 175), (3, 9, 0.1190, 175), (3, 24, 0.0839, 400), (4, 9, 0.1037, 175),
    (5, 10, 0.0883, 175), (6, 10, 0.0605, 175), (7, 8, 0.0614, 175), (8, 9, 0.1651, 175),
    (8, 10, 0.1651, 175), (9, 11, 0.0839, 400), (9, 12, 0.0839, 400), (10, 11, 0.0839, 400),
    (10, 12, 0.0839, 400), (11, 13, 0.0476, 500), (11, 14, 0.0418, 500), (12, 13, 0.0476, 500),
    (12, 23, 0.0966, 500), (13, 23, 0.0865, 500), (14, 16, 0.0389, 500), (15, 16, 0.0173, 500),
    (15, 21, 0.0490, 500), (15, 21, 0.0490, 500), (15, 24, 0.0519, 500), (16, 17, 0.0259, 500),
    (16, 19, 0.0231, 500), (17, 18, 0.0144, 500), (17, 22, 0.1053, 500), (18, 21, 0.0259, 500),
    (18, 21, 0.0259, 500), (19, 20, 0.0396, 500), (19, 20, 0.0396, 500), (20, 23, 0.0216, 500),
    (20, 23, 0.0216, 500), (21, 22, 0.0678, 500), (23, 25, 0.0500, 500),
]

# (bus, pMax, pMin, cost $/MWh, ramp MW/h)
RTS_UNITS = [
    (18, 400, 300, 6.4, 120), (21, 400, 300, 6.6, 120),
    (22, 50, 0, 3.0, 300), (22, 50, 0, 3.1, 300), (22, 50, 0, 3.2, 300),
    (23, 150, 60, 17.8, 180),
    (15, 155, 5, 22.4, 180), (16, 155, 5, 22.6, 180),
    (23, 155, 5, 23.5, 180), (23, 155, 5, 23.7, 180),
    (13, 120, 10, 25.9, 240), (13, 120, 10, 26.0, 240), (7, 115, 10, 26.1, 240),
    (15, 217, 7, 30.8, 300), (16, 217, 7, 31.0, 300), (2, 216, 6, 31.2, 300),
    (1, 34, 0, 45.0, 330), (1, 34, 0, 45.5, 330), (2, 33, 0, 46.0, 330), (7, 33, 0, 46.5, 330),
    (25, 33, 0, 47.0, 330), (25, 33, 0, 47.5, 330),
    (15, 38, 0, 60.0, 240), (15, 38, 0, 61.0, 240), (13, 37, 0, 62.0, 240), (21, 37, 0, 63.0, 240),
]

# reduced 6-bus aggregate: buses, lines, units
REDUCED_BUS_SHARE = {"A": 0.18, "B": 0.14, "C": 0.22, "D": 0.20, "E": 0.16, "F": 0.10}
REDUCED_LINES = [
    ("A", "B", 0.05, 600), ("A", "C", 0.06, 600), ("B", "C", 0.04, 600), ("C", "D", 0.05, 700),
    ("D", "E", 0.04, 600), ("E", "F", 0.05, 500), ("B", "F", 0.07, 500),
]
REDUCED_UNITS = [
    ("nuclear", "E", 800, 600, 6.5, 400),
    ("hydro", "F", 150, 0, 3.0, 150),
    ("coal1", "F", 150, 60, 17.8, 150),
    ("coal2", "A", 310, 10, 22.5, 310),
    ("coal3", "F", 310, 10, 23.6, 310),
    ("cc1", "C", 355, 30, 26.0, 355),
    ("cc2", "B", 650, 20, 31.0, 650),
    ("ct1", "A", 200, 0, 45.0, 200),
    ("ct2", "D", 150, 0, 60.0, 150),
]

TABLE1_BATTERY = dict(
    charge_limit=50.0,
    discharge_limit=50.0,
    energy_capacity=200.0,
    soc_min=20.0,
    soc_max=180.0,
    soc_initial=90.0,
    efficiency_charge=0.95,
    efficiency_discharge=0.95,
    cycle_life_ref=6000.0,
    cycle_depth_ref=0.8,
    replacement_cost=200_000.0,
    perf_score=1.0,
)


def table1_battery(bus: str = "313", id: str = "bess") -> BatteryUnit:
    return BatteryUnit(id=id, bus=bus, **TABLE1_BATTERY)


def quarter_hour_load() -> np.ndarray:
    """96 quarter-hour loads interpolated between the hourly points (wrapping at midnight)."""
    knots = np.arange(25, dtype=float)
    vals = np.append(HOURLY_LOAD, HOURLY_LOAD[0])
    return np.interp(np.arange(96) / 4.0, knots, vals)


def _requirements(total_load: np.ndarray) -> SystemRequirements:
    reg = np.round(REGCAP_SHARE * total_load, 3)
    return SystemRequirements(
        reserve_req=tuple(np.round(RESERVE_SHARE * total_load, 3).tolist()),
        reg_cap_req=tuple(reg.tolist()),
        reg_mileage_req=tuple(np.round(MILEAGE_RATIO * reg, 6).tolist()),
    )


def rts_area3_synthetic() -> SystemModel:
    load = quarter_hour_load()
    T = load.size
    total_share = sum(LOAD_SHARE.values())
    buses = []
    for k in range(1, 26):
        share = LOAD_SHARE.get(k, 0.0) / total_share
        buses.append(Bus(f"3{k:02d}", tuple(np.round(share * load, 4).tolist())))
    # nodal rounding residue goes to the largest load bus
    residue = load - np.array([b.load_profile for b in buses]).sum(axis=0)
    big = max(range(25), key=lambda i: LOAD_SHARE.get(i + 1, 0.0))
    buses[big] = Bus(buses[big].id, tuple((np.array(buses[big].load_profile) + residue).tolist()))
    lines = tuple(
        TransmissionLine(f"L{i + 1:02d}", f"3{f:02d}", f"3{t:02d}", x, float(r))
        for i, (f, t, x, r) in enumerate(RTS_BRANCHES)
    )
    gens = tuple(
        Generator(
            id=f"G{i + 1:02d}",
            bus=f"3{bus:02d}",
            p_min=float(pmin),
            p_max=float(pmax),
            ramp_limit=float(ramp) * 0.25,
            energy_price_offer=tuple([float(cost)] * T),
            perf_score=1.0,
        )
        for i, (bus, pmax, pmin, cost, ramp) in enumerate(RTS_UNITS)
    )
    model = SystemModel(
        name="rts-area3-synthetic",
        horizon=Horizon(T, 0.25, 45),
        buses=tuple(buses),
        lines=lines,
        generators=gens,
        batteries=(table1_battery("313"),),
        requirements=_requirements(load),
        slack_bus="313",
    )
    return build_default_offers(model)


def rts_area3_reduced() -> SystemModel:
    load = HOURLY_LOAD.copy()
    T = load.size
    buses = tuple(Bus(k, tuple(np.round(s * load, 4).tolist())) for k, s in REDUCED_BUS_SHARE.items())
    lines = tuple(TransmissionLine(f"L{i + 1}", f, t, x, float(r)) for i, (f, t, x, r) in enumerate(REDUCED_LINES))
    gens = tuple(
        Generator(id=name, bus=bus, p_min=float(pmin), p_max=float(pmax), ramp_limit=float(ramp),
                  energy_price_offer=tuple([float(cost)] * T), perf_score=1.0)
        for name, bus, pmax, pmin, cost, ramp in REDUCED_UNITS
    )
    model = SystemModel(
        name="rts-area3-reduced",
        horizon=Horizon(T, 1.0, 180),
        buses=buses,
        lines=lines,
        generators=gens,
        batteries=(table1_battery("C"),),
        requirements=_requirements(load),
        slack_bus="C",
    )
    return build_default_offers(model)


BUNDLED = {"rts-area3-synthetic": rts_area3_synthetic, "rts-area3-reduced": rts_area3_reduced}


def bundled_path(name: str) -> Path:
    if name not in BUNDLED:
        raise KeyError(f"unknown bundled dataset {name!r}; available: {sorted(BUNDLED)}")
    return Path(str(resources.files("bessmarket") / "data" / f"{name}.json"))


def load_bundled(name: str) -> SystemModel:
    return load_system(bundled_path(name))


def write_bundled(directory: str | Path | None = None) -> None:
    out = Path(directory) if directory else Path(__file__).parent / "data"
    out.mkdir(parents=True, exist_ok=True)
    for name, fn in BUNDLED.items():
        save_system(fn(), out / f"{name}.json")


# --------------------------------------------------------------------------
# small systems for tests and the offer-grid oracle


def toy_system(
    gens,
    load,
    battery: BatteryUnit | None = None,
    reserve_req=0.0,
    reg_cap_req=0.0,
    reg_mileage_req=None,
    T: int = 1,
    dt: float = 1.0,
    buses=("1",),
    lines=(),
    load_bus=None,
    mileage_multiplier: float = 1.5,
    agc_steps: int = 45,
) -> SystemModel:
    """Build a small system.

    ``gens`` is a list of ``(bus, pMax, price)`` or ``(bus, pMin, pMax, price)``
    tuples; ``load`` a scalar, a per-interval list, or a dict bus -> profile.
    ``lines`` is a list of ``(from, to, reactance, limit)``.
    """

    def prof(v):
        arr = np.broadcast_to(np.asarray(v, dtype=float), (T,))
        return tuple(float(x) for x in arr)

    if isinstance(load, dict):
        loads = {b: prof(load.get(b, 0.0)) for b in buses}
    else:
        target = load_bus if load_bus is not None else buses[-1]
        loads = {b: prof(load if b == target else 0.0) for b in buses}
    generators = []
    for i, spec in enumerate(gens):
        if len(spec) == 3:
            bus, pmax, price = spec
            pmin = 0.0
        else:
            bus, pmin, pmax, price = spec
        generators.append(Generator(f"g{i + 1}", str(bus), float(pmin), float(pmax), 1e4, prof(price)))
    if battery is None:
        battery = BatteryUnit("bess", buses[0], 0.0, 0.0, 1.0, 0.0, 1.0, 0.5)
    reg = prof(reg_cap_req)
    mil = prof(reg_mileage_req) if reg_mileage_req is not None else tuple(1.5 * x for x in reg)
    model = SystemModel(
        name="toy",
        horizon=Horizon(T, dt, agc_steps),
        buses=tuple(Bus(str(b), loads[b]) for b in buses),
        lines=tuple(TransmissionLine(f"l{i + 1}", str(f), str(t), x, float(lim)) for i, (f, t, x, lim) in enumerate(lines)),
        generators=tuple(generators),
        batteries=(battery,),
        requirements=SystemRequirements(prof(reserve_req), reg, mil),
        mileage_multiplier=mileage_multiplier,
    )
    return build_default_offers(model)
