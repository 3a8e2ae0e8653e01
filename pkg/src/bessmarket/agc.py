"""AGC signal synthesis, participation-factor dispatch and intra-interval SOC."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._accel import maybe_njit
from .model import BatteryUnit, SystemModel

DEFAULT_SEED = 20240601
MEAN_TOL = 1e-9
MILEAGE_TOL = 1e-6


class AgcError(ValueError):
    pass


@dataclass
class AgcTrace:
    setpoints: np.ndarray  # (T, S) MW, system level
    step_hours: float

    @property
    def num_intervals(self) -> int:
        return self.setpoints.shape[0]

    @property
    def steps(self) -> int:
        return self.setpoints.shape[1]

    def mileage(self) -> np.ndarray:
        """Per-interval total variation between consecutive setpoints (MW)."""
        return np.abs(np.diff(self.setpoints, axis=1)).sum(axis=1)

    def audit(self, reg_mileage_req, reg_cap_req=None) -> list[str]:
        problems = []
        mean = self.setpoints.mean(axis=1)
        for t in np.flatnonzero(np.abs(mean) > MEAN_TOL):
            problems.append(f"interval {t}: mean {mean[t]:.3e} MW is not zero")
        req = np.asarray(reg_mileage_req, dtype=float)
        err = np.abs(self.mileage() - req)
        for t in np.flatnonzero(err > MILEAGE_TOL * np.maximum(1.0, req)):
            problems.append(f"interval {t}: mileage off by {err[t]:.3e} MW")
        if reg_cap_req is not None:
            cap = np.asarray(reg_cap_req, dtype=float)
            over = np.abs(self.setpoints).max(axis=1) - cap
            for t in np.flatnonzero(over > 1e-9):
                problems.append(f"interval {t}: setpoint exceeds regulation capacity by {over[t]:.3e} MW")
        return problems


def seed_series(num_intervals: int, steps: int, seed: int = DEFAULT_SEED) -> np.ndarray:
    """Reproducible mean-reverting random walk standing in for a sample AGC record."""
    rng = np.random.default_rng(seed)
    n = num_intervals * steps
    shocks = rng.standard_normal(n)
    x = np.empty(n)
    level = 0.0
    for i in range(n):
        level = 0.97 * level + shocks[i]
        x[i] = level
    return x.reshape(num_intervals, steps)


def _fit_interval(x: np.ndarray, cap: float, mileage: float, max_iter: int = 100) -> np.ndarray:
    y = x - x.mean()
    for _ in range(max_iter):
        tv = np.abs(np.diff(y)).sum()
        if tv <= 0:
            raise AgcError("cannot scale zero-variation signal")
        y = y * (mileage / tv)
        if cap <= 0 or np.abs(y).max() <= cap * (1 + 1e-12):
            return y
        y = np.clip(y, -cap, cap)
        y = y - y.mean()
    raise AgcError(f"AGC fitting did not converge in {max_iter} iterations (capacity {cap}, mileage {mileage})")


def synthesize_agc(seed, reg_cap_req, reg_mileage_req, step_hours: float) -> AgcTrace:
    """Fit a seed series (T, S) to zero mean, exact mileage and the capacity band."""
    x = np.atleast_2d(np.asarray(seed, dtype=float))
    cap = np.asarray(reg_cap_req, dtype=float)
    mil = np.asarray(reg_mileage_req, dtype=float)
    if cap.shape != (x.shape[0],) or mil.shape != (x.shape[0],):
        raise AgcError("requirement series length must equal the number of seed intervals")
    if x.shape[1] < 2:
        raise AgcError("at least two AGC steps per interval are needed")
    out = np.zeros_like(x)
    for t in range(x.shape[0]):
        if mil[t] == 0:
            continue
        if np.ptp(x[t]) == 0:
            raise AgcError(f"cannot scale zero-variation signal (interval {t})")
        out[t] = _fit_interval(x[t], cap[t], mil[t])
    return AgcTrace(out, step_hours)


def synthesize_for_model(model: SystemModel, seed: int = DEFAULT_SEED) -> AgcTrace:
    h = model.horizon
    return synthesize_agc(seed_series(h.num_intervals, h.agc_steps_per_interval, seed),
                          model.requirements.reg_cap_req, model.requirements.reg_mileage_req, h.agc_step_hours)


@dataclass
class ParticipationDispatch:
    units: list[str]  # "gen:<id>" / "battery:<id>"
    factors: np.ndarray  # (U, T)
    setpoints: np.ndarray  # (U, T, S) MW
    mileage: np.ndarray  # (U, T) MW

    def unit(self, name: str) -> int:
        return self.units.index(name)


def participation_factors(reg_cap, tol: float = 1e-9) -> np.ndarray:
    """Column-normalised regulation capacity, (U, T) -> (U, T)."""
    cap = np.clip(np.asarray(reg_cap, dtype=float), 0.0, None)
    cap = np.where(cap > tol, cap, 0.0)
    total = cap.sum(axis=0)
    return np.divide(cap, total, out=np.zeros_like(cap), where=total > 0)


def dispatch_agc(trace: AgcTrace, reg_cap, units=None, basis: str = "regCap") -> ParticipationDispatch:
    """Share each interval's system signal in proportion to scheduled regulation capacity.

    ``reg_cap`` is a (U, T) array, or a ClearingResult whose generator and
    battery schedules are stacked in that order; ``basis`` then picks the
    product the factors follow (``regCap`` or ``regMileage``).
    """
    if basis not in ("regCap", "regMileage"):
        raise AgcError(f"participation basis must be regCap or regMileage, got {basis!r}")
    if hasattr(reg_cap, "gen") and hasattr(reg_cap, "battery"):
        res = reg_cap
        units = [f"gen:{g.id}" for g in res.model.generators] + [f"battery:{b.id}" for b in res.model.batteries]
        reg_cap = np.vstack([res.gen[basis], res.battery[basis]])
    cap = np.atleast_2d(np.asarray(reg_cap, dtype=float))
    if cap.shape[1] != trace.num_intervals:
        raise AgcError("regulation schedule and AGC trace cover different horizons")
    units = list(units) if units is not None else [f"unit{u}" for u in range(cap.shape[0])]
    f = participation_factors(cap)
    live = np.abs(trace.setpoints).max(axis=1) > 0
    dead = np.flatnonzero(live & (f.sum(axis=0) == 0))
    if dead.size:
        raise AgcError(f"undeliverable AGC: no regulation capacity scheduled in intervals {dead.tolist()}")
    sp = f[:, :, None] * trace.setpoints[None, :, :]
    return ParticipationDispatch(units, f, sp, f * trace.mileage()[None, :])


def _soc_walk(soc0, base, setpoints, step_hours, eta_c, eta_d):
    T, S = setpoints.shape
    out = np.empty(T * S + 1)
    out[0] = soc0
    soc = soc0
    k = 1
    for t in range(T):
        for s in range(S):
            p = base[t] + setpoints[t, s]
            if p >= 0.0:
                soc -= p * step_hours / eta_d
            else:
                soc -= p * step_hours * eta_c
            out[k] = soc
            k += 1
    return out


soc_walk_kernel = maybe_njit(_soc_walk)


@dataclass
class SocTrajectory:
    soc: np.ndarray  # (T*S + 1,) MWh, starting value first
    steps: int
    violations: list[int]  # step indices outside [socMin, socMax]

    def at_interval_ends(self) -> np.ndarray:
        return self.soc[:: self.steps]


def soc_trajectory(setpoints, battery: BatteryUnit, base_power, step_hours: float,
                   soc0: float | None = None, tol: float = 1e-6) -> SocTrajectory:
    """SOC after each AGC step.

    ``setpoints`` is the battery's (T, S) AGC share, positive = discharge;
    ``base_power`` is the net energy-market schedule per interval
    (discharge minus charge).
    """
    sp = np.ascontiguousarray(np.atleast_2d(setpoints), dtype=np.float64)
    base = np.ascontiguousarray(base_power, dtype=np.float64)
    if base.shape != (sp.shape[0],):
        raise AgcError("base schedule length must equal the number of intervals")
    start = battery.soc_initial if soc0 is None else soc0
    soc = soc_walk_kernel(float(start), base, sp, float(step_hours), battery.efficiency_charge,
                          battery.efficiency_discharge)
    bad = np.flatnonzero((soc < battery.soc_min - tol) | (soc > battery.soc_max + tol)).tolist()
    return SocTrajectory(soc, sp.shape[1], bad)


def write_trace_csv(trace: AgcTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "step", "MW"])
        for t in range(trace.num_intervals):
            for s in range(trace.steps):
                w.writerow([t + 1, s + 1, f"{trace.setpoints[t, s]:.12g}"])


def read_trace_csv(path, step_hours: float) -> AgcTrace:
    rows = []
    with open(Path(path), newline="") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames is None or not {"interval", "step", "MW"} <= set(rd.fieldnames):
            raise AgcError(f"{path}: expected columns interval, step, MW")
        for line, r in enumerate(rd, start=2):
            try:
                rows.append((int(r["interval"]), int(r["step"]), float(r["MW"])))
            except (TypeError, ValueError) as exc:
                raise AgcError(f"{path}:{line}: {exc}") from None
    if not rows:
        raise AgcError(f"{path}: empty trace")
    T = max(r[0] for r in rows)
    S = max(r[1] for r in rows)
    if len(rows) != T * S:
        raise AgcError(f"{path}: expected {T * S} rows for {T} intervals x {S} steps, found {len(rows)}")
    sp = np.zeros((T, S))
    for t, s, v in rows:
        sp[t - 1, s - 1] = v
    return AgcTrace(sp, step_hours)
