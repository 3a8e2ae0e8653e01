"""Domain types shared by the market-clearing, bilevel and scenario code.

All currency is in $, power in MW, energy in MWh.  Per-interval quantities are
MW averages over the interval.  Everything here is immutable after
construction; profiles are stored as tuples so models hash and compare by
value.
"""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

PRODUCTS = ("energyDischarge", "energyCharge", "reserve", "regCap", "regMileage")
ANCILLARY_MULTIPLIERS = {"reserve": 0.15, "regCap": 0.4, "regMileage": 0.07}


class ModelError(ValueError):
    """Raised for malformed system definitions (schema-level problems)."""


@dataclass(frozen=True)
class Horizon:
    num_intervals: int
    interval_length: float  # hours
    agc_steps_per_interval: int = 45

    @property
    def agc_step_hours(self) -> float:
        return self.interval_length / self.agc_steps_per_interval


@dataclass(frozen=True)
class Bus:
    id: str
    load_profile: tuple[float, ...]


@dataclass(frozen=True)
class TransmissionLine:
    id: str
    from_bus: str
    to_bus: str
    reactance: float  # p.u.
    thermal_limit: float  # MW


@dataclass(frozen=True)
class Generator:
    id: str
    bus: str
    p_min: float
    p_max: float
    ramp_limit: float  # MW per interval
    energy_price_offer: tuple[float, ...]
    reserve_price_offer: tuple[float, ...] | None = None
    reg_cap_price_offer: tuple[float, ...] | None = None
    reg_mileage_price_offer: tuple[float, ...] | None = None
    perf_score: float = 1.0


@dataclass(frozen=True)
class BatteryUnit:
    id: str
    bus: str
    charge_limit: float
    discharge_limit: float
    energy_capacity: float
    soc_min: float
    soc_max: float
    soc_initial: float
    efficiency_charge: float = 0.95
    efficiency_discharge: float = 0.95
    cycle_life_ref: float = 6000.0
    cycle_depth_ref: float = 0.8
    replacement_cost: float = 200_000.0  # $/MWh of capacity
    perf_score: float = 1.0


@dataclass(frozen=True)
class SystemRequirements:
    reserve_req: tuple[float, ...]
    reg_cap_req: tuple[float, ...]
    reg_mileage_req: tuple[float, ...]


@dataclass(frozen=True)
class SystemModel:
    name: str
    horizon: Horizon
    buses: tuple[Bus, ...]
    lines: tuple[TransmissionLine, ...]
    generators: tuple[Generator, ...]
    batteries: tuple[BatteryUnit, ...]
    requirements: SystemRequirements
    base_mva: float = 100.0
    mileage_multiplier: float = 1.5
    slack_bus: str | None = None

    @property
    def T(self) -> int:
        return self.horizon.num_intervals

    @property
    def dt(self) -> float:
        return self.horizon.interval_length

    @property
    def slack(self) -> str:
        return self.slack_bus if self.slack_bus is not None else self.buses[0].id

    def bus_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    def battery(self, battery_id: str) -> BatteryUnit:
        for b in self.batteries:
            if b.id == battery_id:
                return b
        raise KeyError(f"unknown battery id {battery_id!r}")

    def load_matrix(self) -> np.ndarray:
        """(num_buses, T) array of nodal loads."""
        return np.array([b.load_profile for b in self.buses], dtype=float).reshape(len(self.buses), self.T)

    def total_load(self) -> np.ndarray:
        return self.load_matrix().sum(axis=0)

    def replace(self, **changes) -> "SystemModel":
        return dataclasses.replace(self, **changes)


@dataclass
class BatteryOffers:
    """Quantity (MW) and price ($/MWh) offers of one battery, per product and interval."""

    quantity: dict[str, np.ndarray]
    price: dict[str, np.ndarray]

    @classmethod
    def zeros(cls, T: int) -> "BatteryOffers":
        return cls({p: np.zeros(T) for p in PRODUCTS}, {p: np.zeros(T) for p in PRODUCTS})


@dataclass
class OfferSet:
    offers: dict[str, BatteryOffers] = field(default_factory=dict)

    @classmethod
    def zeros(cls, model: SystemModel) -> "OfferSet":
        return cls({b.id: BatteryOffers.zeros(model.T) for b in model.batteries})

    def __getitem__(self, battery_id: str) -> BatteryOffers:
        return self.offers[battery_id]


def validate_offers(model: SystemModel, offers: OfferSet, tol: float = 1e-7) -> list[str]:
    problems = []
    for b in model.batteries:
        if b.id not in offers.offers:
            problems.append(f"battery {b.id}: no offers")
            continue
        o = offers[b.id]
        for p in PRODUCTS:
            q = np.asarray(o.quantity[p])
            if q.shape != (model.T,):
                problems.append(f"battery {b.id}: {p} quantity has shape {q.shape}")
                continue
            if np.any(q < -tol):
                problems.append(f"battery {b.id}: negative {p} quantity")
        limit = {"energyCharge": b.charge_limit, "regCap": min(b.charge_limit, b.discharge_limit)}
        for p in PRODUCTS:
            cap = limit.get(p, b.discharge_limit)
            if p == "regMileage":
                cap = model.mileage_multiplier * min(b.charge_limit, b.discharge_limit)
            if np.any(np.asarray(o.quantity[p]) > cap + tol):
                problems.append(f"battery {b.id}: {p} quantity above unit limit {cap}")
    return problems


# --------------------------------------------------------------------------
# validation


def validate_system(model: SystemModel) -> list[str]:
    """Return invariant violations; an empty list means the model is well formed."""
    v: list[str] = []
    h = model.horizon
    T = h.num_intervals
    if T < 1:
        v.append("horizon: numIntervals must be >= 1")
    if h.interval_length <= 0:
        v.append("horizon: intervalLength must be > 0")
    if h.agc_steps_per_interval < 1:
        v.append("horizon: agcStepsPerInterval must be >= 1")

    bus_ids = [b.id for b in model.buses]
    if len(set(bus_ids)) != len(bus_ids):
        v.append("duplicate bus ids")
    known = set(bus_ids)
    if not model.buses:
        v.append("no buses")
    for b in model.buses:
        if len(b.load_profile) != T:
            v.append(f"bus {b.id}: profile length mismatch ({len(b.load_profile)} vs {T})")
        if any(x < 0 for x in b.load_profile):
            v.append(f"bus {b.id}: negative load")

    for ln in model.lines:
        if ln.reactance <= 0:
            v.append(f"line {ln.id}: reactance must be > 0")
        if ln.thermal_limit <= 0:
            v.append(f"line {ln.id}: thermalLimit must be > 0")
        if ln.from_bus == ln.to_bus:
            v.append(f"line {ln.id}: fromBus equals toBus")
        for end in (ln.from_bus, ln.to_bus):
            if end not in known:
                v.append(f"line {ln.id}: unknown bus {end}")

    for g in model.generators:
        if g.bus not in known:
            v.append(f"generator {g.id}: unknown bus {g.bus}")
        if not (0 <= g.p_min <= g.p_max):
            v.append(f"generator {g.id}: requires 0 <= pMin <= pMax")
        if g.ramp_limit <= 0:
            v.append(f"generator {g.id}: rampLimit must be > 0")
        if not 0 <= g.perf_score <= 1:
            v.append(f"generator {g.id}: perfScore outside [0, 1]")
        for name in ("energy_price_offer", "reserve_price_offer", "reg_cap_price_offer", "reg_mileage_price_offer"):
            prof = getattr(g, name)
            if prof is None:
                if name == "energy_price_offer":
                    v.append(f"generator {g.id}: missing energyPriceOffer")
                continue
            if len(prof) != T:
                v.append(f"generator {g.id}: {_camel(name)} profile length mismatch ({len(prof)} vs {T})")
            if any(x < 0 for x in prof):
                v.append(f"generator {g.id}: negative {_camel(name)}")

    if not model.batteries:
        v.append("no battery units")
    for b in model.batteries:
        if b.bus not in known:
            v.append(f"battery {b.id}: unknown bus {b.bus}")
        if b.soc_initial < b.soc_min:
            v.append(f"battery {b.id}: socInitial below socMin")
        if b.soc_initial > b.soc_max:
            v.append(f"battery {b.id}: socInitial above socMax")
        if b.soc_min > b.soc_max:
            v.append(f"battery {b.id}: socMin above socMax")
        if b.soc_max > b.energy_capacity:
            v.append(f"battery {b.id}: socMax above energyCapacity")
        if b.soc_min < 0:
            v.append(f"battery {b.id}: negative socMin")
        for eff in ("efficiency_charge", "efficiency_discharge"):
            if not 0 < getattr(b, eff) <= 1:
                v.append(f"battery {b.id}: {_camel(eff)} outside (0, 1]")
        if b.cycle_life_ref <= 0:
            v.append(f"battery {b.id}: cycleLifeRef must be > 0")
        if not 0 < b.cycle_depth_ref <= 1:
            v.append(f"battery {b.id}: cycleDepthRef outside (0, 1]")
        if b.charge_limit < 0 or b.discharge_limit < 0:
            v.append(f"battery {b.id}: negative charge/discharge limit")
        if b.replacement_cost < 0:
            v.append(f"battery {b.id}: negative replacementCost")

    r = model.requirements
    for name in ("reserve_req", "reg_cap_req", "reg_mileage_req"):
        prof = getattr(r, name)
        if len(prof) != T:
            v.append(f"requirements: {_camel(name)} profile length mismatch ({len(prof)} vs {T})")
        if any(x < 0 for x in prof):
            v.append(f"requirements: negative {_camel(name)}")
    if model.mileage_multiplier <= 0:
        v.append("mileageMultiplier must be > 0")
    if model.slack_bus is not None and model.slack_bus not in known:
        v.append(f"unknown slack bus {model.slack_bus}")
    return v


def build_default_offers(model: SystemModel, multipliers: dict[str, float] | None = None) -> SystemModel:
    """Derive generator ancillary price offers as multiples of their energy offers."""
    mult = dict(ANCILLARY_MULTIPLIERS if multipliers is None else multipliers)
    for k, m in mult.items():
        if m < 0:
            raise ValueError(f"negative multiplier for {k}: {m}")
    gens = []
    for g in model.generators:
        e = np.asarray(g.energy_price_offer, dtype=float)
        gens.append(
            dataclasses.replace(
                g,
                reserve_price_offer=tuple((mult["reserve"] * e).tolist()),
                reg_cap_price_offer=tuple((mult["regCap"] * e).tolist()),
                reg_mileage_price_offer=tuple((mult["regMileage"] * e).tolist()),
            )
        )
    return model.replace(generators=tuple(gens))


def default_mileage_requirement(reg_cap_req, ratio: float = 1.5) -> tuple[float, ...]:
    return tuple(float(ratio * x) for x in reg_cap_req)


# --------------------------------------------------------------------------
# serialization (camelCase on disk, snake_case in Python)


def _camel(name: str) -> str:
    head, *rest = name.split("_")
    return head + "".join(w[:1].upper() + w[1:] for w in rest)


_SNAKE_RE = re.compile(r"(?<!^)(?=[A-Z])")


def _snake(name: str) -> str:
    return _SNAKE_RE.sub("_", name).lower()


def _to_doc(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {_camel(f.name): _to_doc(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_to_doc(x) for x in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def model_to_dict(model: SystemModel) -> dict:
    return _to_doc(model)


def _build(cls, doc: dict, where: str):
    if not isinstance(doc, dict):
        raise ModelError(f"{where}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in doc.items():
        sk = _snake(key)
        if sk not in names:
            raise ModelError(f"{where}: unknown field {key!r}")
        if isinstance(val, list):
            val = tuple(float(x) if isinstance(x, (int, float)) else x for x in val)
        kwargs[sk] = val
    missing = [
        _camel(n)
        for n, f in names.items()
        if n not in kwargs and f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
    ]
    if missing:
        raise ModelError(f"{where}: missing field(s) {', '.join(missing)}")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ModelError(f"{where}: {exc}") from exc


def model_from_dict(doc: dict, validate: bool = True) -> SystemModel:
    if not isinstance(doc, dict):
        raise ModelError("system document must be an object")
    for key in ("horizon", "buses", "generators", "requirements"):
        if key not in doc:
            raise ModelError(f"missing section {key!r}")
    if not doc.get("batteries"):
        raise ModelError("no battery units")
    horizon = _build(Horizon, doc["horizon"], "horizon")
    horizon = Horizon(int(horizon.num_intervals), float(horizon.interval_length), int(horizon.agc_steps_per_interval))
    buses = tuple(_build(Bus, d, f"buses[{i}]") for i, d in enumerate(doc["buses"]))
    lines = tuple(_build(TransmissionLine, d, f"lines[{i}]") for i, d in enumerate(doc.get("lines", [])))
    gens = tuple(_build(Generator, d, f"generators[{i}]") for i, d in enumerate(doc["generators"]))
    bats = tuple(_build(BatteryUnit, d, f"batteries[{i}]") for i, d in enumerate(doc["batteries"]))
    reqs = _build(SystemRequirements, doc["requirements"], "requirements")
    extra = {}
    for key in ("baseMva", "mileageMultiplier", "slackBus"):
        if key in doc:
            extra[_snake(key)] = doc[key]
    unknown = set(doc) - {"name", "horizon", "buses", "lines", "generators", "batteries", "requirements",
                          "baseMva", "mileageMultiplier", "slackBus"}
    if unknown:
        raise ModelError(f"unknown top-level field(s): {', '.join(sorted(unknown))}")
    model = SystemModel(
        name=doc.get("name", "system"),
        horizon=horizon,
        buses=buses,
        lines=lines,
        generators=gens,
        batteries=bats,
        requirements=reqs,
        **extra,
    )
    if any(g.reserve_price_offer is None or g.reg_cap_price_offer is None or g.reg_mileage_price_offer is None
           for g in model.generators):
        model = build_default_offers(model)
    if validate:
        problems = validate_system(model)
        if problems:
            raise ModelError("; ".join(problems))
    return model


def save_system(model: SystemModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1))


def load_system(path: str | Path, validate: bool = True) -> SystemModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return model_from_dict(doc, validate=validate)
