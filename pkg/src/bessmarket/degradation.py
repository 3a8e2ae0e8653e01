"""Cycle-depth battery degradation: rainflow counting, stress curve, PWL cost.

Cycle life follows a power law anchored at one reference point,

    N(d) = N_ref * (d_ref / d) ** k,

so one full cycle of depth ``d`` consumes ``phi(d) = d**k / (N_ref * d_ref**k)``
of the battery's life and costs ``replacementCost * energyCapacity * phi(d)``.

Inside the optimisation the cost is charged on discharged energy through
``J`` equal-depth segments (segment 1 is the shallowest); the marginal cost
of segment ``j`` is ``replacementCost * (phi(j/J) - phi((j-1)/J)) * J`` in $
per MWh withdrawn from the cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._accel import maybe_njit
from .model import BatteryUnit


class DegradationError(ValueError):
    pass


# --------------------------------------------------------------------------
# rainflow kernels


def _turning_points(x):
    n = x.shape[0]
    out = np.empty(n, dtype=np.float64)
    if n == 0:
        return out[:0]
    # drop repeated samples first
    k = 0
    out[0] = x[0]
    for i in range(1, n):
        if x[i] != out[k]:
            k += 1
            out[k] = x[i]
    m = k + 1
    if m <= 2:
        return out[:m].copy()
    tp = np.empty(m, dtype=np.float64)
    tp[0] = out[0]
    j = 1
    for i in range(1, m - 1):
        if (out[i] - out[i - 1]) * (out[i + 1] - out[i]) < 0.0:
            tp[j] = out[i]
            j += 1
    tp[j] = out[m - 1]
    return tp[: j + 1].copy()


def _rainflow(tp):
    """Four-point rainflow over turning points.  Returns (ranges, weights, residual_flag)."""
    n = tp.shape[0]
    ranges = np.empty(n, dtype=np.float64)
    weights = np.empty(n, dtype=np.float64)
    resid = np.zeros(n, dtype=np.bool_)
    stack = np.empty(n, dtype=np.float64)
    top = 0
    nc = 0
    for i in range(n):
        stack[top] = tp[i]
        top += 1
        while top >= 4:
            a = stack[top - 4]
            b = stack[top - 3]
            c = stack[top - 2]
            d = stack[top - 1]
            inner = abs(b - c)
            if inner <= abs(a - b) and inner <= abs(c - d):
                ranges[nc] = inner
                weights[nc] = 1.0
                nc += 1
                stack[top - 3] = d
                top -= 2
            else:
                break
    for i in range(top - 1):
        ranges[nc] = abs(stack[i + 1] - stack[i])
        weights[nc] = 0.5
        resid[nc] = True
        nc += 1
    return ranges[:nc].copy(), weights[:nc].copy(), resid[:nc].copy()


turning_points_kernel = maybe_njit(_turning_points)
rainflow_kernel = maybe_njit(_rainflow)


def rainflow_count(soc, capacity: float, merge_tol: float = 1e-12) -> list[tuple[float, float]]:
    """Cycle inventory ``[(depth, weight), ...]`` of an SOC series (MWh).

    Depths are ranges normalised by ``capacity``; weights are 1.0 for closed
    cycles and 0.5 for residual half cycles.  Two consecutive residual half
    cycles of equal range (an excursion that returns to its starting level)
    are reported as one full cycle.
    """
    soc = np.ascontiguousarray(soc, dtype=np.float64)
    if capacity <= 0:
        raise DegradationError("capacity must be positive")
    if soc.size < 2:
        return []
    ranges, weights, resid = rainflow_kernel(turning_points_kernel(soc))
    out: list[tuple[float, float]] = []
    scale = max(1.0, float(np.max(np.abs(soc))))
    i = 0
    n = ranges.size
    while i < n:
        if resid[i] and i + 1 < n and resid[i + 1] and abs(ranges[i] - ranges[i + 1]) <= merge_tol * scale:
            out.append((float(ranges[i]) / capacity, 1.0))
            i += 2
            continue
        out.append((float(ranges[i]) / capacity, float(weights[i])))
        i += 1
    return [(d, w) for d, w in out if d > 0.0]


# --------------------------------------------------------------------------
# life curve and costs


@dataclass(frozen=True)
class CycleLifeCurve:
    ref_cycles: float = 6000.0
    ref_depth: float = 0.8
    exponent: float = 2.0

    def __post_init__(self):
        if self.ref_cycles <= 0:
            raise DegradationError("refCycles must be > 0")
        if not 0 < self.ref_depth <= 1:
            raise DegradationError("refDepth must lie in (0, 1]")
        if self.exponent < 1:
            raise DegradationError("exponent k must be >= 1")

    @classmethod
    def for_battery(cls, battery: BatteryUnit, exponent: float = 2.0) -> "CycleLifeCurve":
        return cls(battery.cycle_life_ref, battery.cycle_depth_ref, exponent)

    def stress(self, depth):
        """Life fraction consumed by one full cycle of the given depth."""
        d = np.asarray(depth, dtype=float)
        return d**self.exponent / (self.ref_cycles * self.ref_depth**self.exponent)

    def cycles_to_failure(self, depth):
        d = np.asarray(depth, dtype=float)
        with np.errstate(divide="ignore"):
            return self.ref_cycles * (self.ref_depth / d) ** self.exponent


def cycle_cost(depth: float, weight: float, battery: BatteryUnit, curve: CycleLifeCurve | None = None) -> float:
    if not 0 <= depth <= 1 + 1e-12:
        raise DegradationError(f"cycle depth {depth} outside [0, 1]")
    curve = curve or CycleLifeCurve.for_battery(battery)
    return float(weight * battery.replacement_cost * battery.energy_capacity * curve.stress(min(depth, 1.0)))


def inventory_cost(cycles, battery: BatteryUnit, curve: CycleLifeCurve | None = None) -> float:
    curve = curve or CycleLifeCurve.for_battery(battery)
    return float(sum(cycle_cost(d, w, battery, curve) for d, w in cycles))


def rainflow_cost(soc, battery: BatteryUnit, curve: CycleLifeCurve | None = None) -> float:
    return inventory_cost(rainflow_count(soc, battery.energy_capacity), battery, curve)


@dataclass(frozen=True)
class PWLSegments:
    costs: np.ndarray  # $/MWh withdrawn, shallow -> deep
    width: float  # depth fraction per segment
    segment_energy: float  # MWh per segment

    @property
    def count(self) -> int:
        return self.costs.size

    @classmethod
    def build(cls, battery: BatteryUnit, segments: int = 10, curve: CycleLifeCurve | None = None) -> "PWLSegments":
        if segments < 1:
            raise DegradationError("segment count must be >= 1")
        curve = curve or CycleLifeCurve.for_battery(battery)
        width = 1.0 / segments
        edges = curve.stress(np.arange(segments + 1) * width)
        costs = battery.replacement_cost * np.diff(edges) / width
        return cls(costs, width, width * battery.energy_capacity)

    def max_step_error(self) -> float:
        """Discretisation bound max_j (c_j - c_{j-1}) * segment energy."""
        if self.count == 1:
            return float(self.costs[0] * self.segment_energy)
        return float(np.max(np.diff(self.costs)) * self.segment_energy)

    def initial_fill(self, soc: float) -> np.ndarray:
        """Split an SOC over segments, filling the shallowest first."""
        k = np.arange(self.count)
        return np.clip(soc - k * self.segment_energy, 0.0, self.segment_energy)


def pwl_cost(discharge_by_segment, segments: PWLSegments, tol: float = 1e-7) -> np.ndarray:
    """Degradation cost per interval from energy withdrawn per segment.

    ``discharge_by_segment`` has shape (J, T) in MWh.
    """
    e = np.atleast_2d(np.asarray(discharge_by_segment, dtype=float))
    if e.shape[0] != segments.count:
        raise DegradationError(f"expected {segments.count} segment rows, got {e.shape[0]}")
    if np.any(e < -tol):
        raise DegradationError("negative segment energy")
    if np.any(e > segments.segment_energy + tol):
        raise DegradationError("segment overflow: energy above segment width")
    return segments.costs @ np.clip(e, 0.0, None)


def fill_shallow_to_deep(energy: float, segments: PWLSegments) -> np.ndarray:
    """Distribute a discharge over segments starting at the shallowest one."""
    out = np.zeros(segments.count)
    rest = energy
    for j in range(segments.count):
        take = min(rest, segments.segment_energy)
        out[j] = take
        rest -= take
        if rest <= 0:
            break
    if rest > 1e-9:
        raise DegradationError("discharge exceeds total segment capacity")
    return out


def _segment_walk(soc, seg_energy, costs, fill):
    """Greedy segment accounting along an SOC path: both charge and discharge
    act on the shallowest segment with room / energy.  Returns withdrawals (J, n-1)."""
    J = costs.shape[0]
    n = soc.shape[0]
    e = fill.copy()
    out = np.zeros((J, n - 1))
    for i in range(n - 1):
        delta = soc[i + 1] - soc[i]
        if delta > 0.0:
            for j in range(J):
                room = seg_energy - e[j]
                if room > 0.0:
                    take = min(room, delta)
                    e[j] += take
                    delta -= take
                    if delta <= 0.0:
                        break
        elif delta < 0.0:
            need = -delta
            for j in range(J):
                if e[j] > 0.0:
                    take = min(e[j], need)
                    e[j] -= take
                    out[j, i] = take
                    need -= take
                    if need <= 0.0:
                        break
    return out


segment_walk_kernel = maybe_njit(_segment_walk)


def pwl_trajectory_cost(soc, battery: BatteryUnit, segments: PWLSegments) -> float:
    """Linearised cost of a cell-level SOC path under cheapest-first segment use.

    This is what the optimisation would charge for the same path: withdrawals
    come from the cheapest non-empty segment, and refills go to the cheapest
    segment with room.
    """
    soc = np.ascontiguousarray(soc, dtype=np.float64)
    if soc.size < 2:
        return 0.0
    fill = segments.initial_fill(float(soc[0]))
    w = segment_walk_kernel(soc, float(segments.segment_energy), segments.costs.astype(np.float64), fill)
    return float(segments.costs @ w.sum(axis=1))


@dataclass
class DegradationResult:
    cost: np.ndarray  # DegCost per interval, $
    cycles: list[tuple[float, float]]


@dataclass
class LinearizationAudit:
    pwl_cost: float
    rainflow_cost: float
    abs_error: float
    rel_error: float
    bound: float
    cycles: list[tuple[float, float]]

    @property
    def flagged(self) -> bool:
        return self.rel_error > self.bound


def audit_linearization(soc_trajectory, segment_solution, battery: BatteryUnit, segments: PWLSegments,
                        curve: CycleLifeCurve | None = None, bound: float = 0.10,
                        num_intervals: int | None = None) -> LinearizationAudit:
    """Compare the linearised cost of a schedule against rainflow on its SOC path.

    ``segment_solution`` is the (J, T) per-segment withdrawal; when
    ``num_intervals`` is given it must match T.
    """
    seg = np.atleast_2d(np.asarray(segment_solution, dtype=float))
    if num_intervals is not None and seg.shape[1] != num_intervals:
        raise DegradationError(f"horizon mismatch: segment solution has {seg.shape[1]} intervals, expected {num_intervals}")
    soc = np.asarray(soc_trajectory, dtype=float)
    if num_intervals is not None and (soc.size - 1) % num_intervals != 0:
        raise DegradationError("horizon mismatch: SOC trajectory length is not a multiple of the interval count")
    if seg.shape[0] != segments.count:
        raise DegradationError(f"expected {segments.count} segment rows, got {seg.shape[0]}")
    if np.any(seg < -1e-7):
        raise DegradationError("negative segment energy")
    # no per-interval width check here: a segment refilled by regulation charging
    # can be drawn more than once inside one interval
    lin = float(segments.costs @ np.clip(seg, 0.0, None).sum(axis=1))
    cycles = rainflow_count(soc, battery.energy_capacity)
    exact = inventory_cost(cycles, battery, curve)
    err = abs(lin - exact)
    rel = err / exact if exact > 0 else (0.0 if err == 0 else np.inf)
    return LinearizationAudit(lin, exact, err, rel, bound, cycles)
