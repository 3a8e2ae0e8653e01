import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bessmarket.datasets import table1_battery
from bessmarket.degradation import (
    CycleLifeCurve,
    DegradationError,
    PWLSegments,
    audit_linearization,
    cycle_cost,
    fill_shallow_to_deep,
    pwl_cost,
    pwl_trajectory_cost,
    rainflow_count,
    rainflow_cost,
    rainflow_kernel,
    turning_points_kernel,
)


def brute_force_rainflow(series):
    """Independent four-point pairing: rescan from the start after every extraction."""
    pts = []
    for v in series:
        if not pts or v != pts[-1]:
            pts.append(float(v))
    tp = [pts[0]] + [pts[i] for i in range(1, len(pts) - 1)
                     if (pts[i] - pts[i - 1]) * (pts[i + 1] - pts[i]) < 0] + ([pts[-1]] if len(pts) > 1 else [])
    full = []
    changed = True
    while changed:
        changed = False
        for i in range(len(tp) - 3):
            a, b, c, d = tp[i:i + 4]
            if abs(b - c) <= abs(a - b) and abs(b - c) <= abs(c - d):
                full.append(abs(b - c))
                del tp[i + 1:i + 3]
                changed = True
                break
    half = [abs(tp[i + 1] - tp[i]) for i in range(len(tp) - 1)]
    return sorted(full), sorted(half)


def kernel_inventory(series):
    ranges, weights, _ = rainflow_kernel(turning_points_kernel(np.asarray(series, dtype=float)))
    return sorted(ranges[weights == 1.0].tolist()), sorted(ranges[weights == 0.5].tolist())


# --------------------------------------------------------------------------
# unit economics


def test_full_reference_cycle_cost():
    bt = table1_battery()
    assert cycle_cost(0.8, 1.0, bt) == pytest.approx(6666.67, abs=0.01)
    assert bt.replacement_cost * bt.energy_capacity / bt.cycle_life_ref == pytest.approx(6666.67, abs=0.01)


def test_half_depth_cycle_cost():
    assert cycle_cost(0.4, 1.0, table1_battery()) == pytest.approx(1666.67, abs=0.01)
    assert cycle_cost(0.0, 1.0, table1_battery()) == 0.0
    with pytest.raises(DegradationError):
        cycle_cost(1.2, 1.0, table1_battery())


def test_two_shallow_discharges_cheaper_than_one_deeper():
    seg = PWLSegments.build(table1_battery(), 10)
    two_shallow = 2 * pwl_cost(fill_shallow_to_deep(20.0, seg)[:, None], seg).sum()
    one_deeper = pwl_cost(fill_shallow_to_deep(40.0, seg)[:, None], seg).sum()
    assert two_shallow < one_deeper


def test_pwl_reproduces_reference_cycle():
    bt = table1_battery()
    seg = PWLSegments.build(bt, 10)
    withdraw = fill_shallow_to_deep(0.8 * bt.energy_capacity, seg)
    assert np.count_nonzero(withdraw) == 8
    cost = float(pwl_cost(withdraw[:, None], seg).sum())
    assert abs(cost - 6666.67) / 6666.67 <= 0.10


def test_segment_costs_increase_with_depth():
    seg = PWLSegments.build(table1_battery(), 10)
    assert np.all(np.diff(seg.costs) > 0)
    assert seg.segment_energy == pytest.approx(20.0)


def test_cycle_life_curve():
    curve = CycleLifeCurve()
    assert curve.cycles_to_failure(0.8) == pytest.approx(6000)
    assert curve.cycles_to_failure(0.4) == pytest.approx(24000)
    with pytest.raises(DegradationError):
        CycleLifeCurve(exponent=0.5)
    with pytest.raises(DegradationError):
        CycleLifeCurve(ref_depth=1.5)


def test_worked_trajectory():
    bt = table1_battery()
    # 90 -> 180 -> 20 -> 90: one residual half cycle of 80% plus two smaller halves
    cycles = rainflow_count([90, 180, 20, 90], bt.energy_capacity)
    assert sorted(cycles) == sorted([(0.45, 0.5), (0.8, 0.5), (0.35, 0.5)])
    assert rainflow_cost([180, 20, 180], bt) == pytest.approx(6666.67, abs=0.01)
    seg = PWLSegments.build(bt, 10)
    assert pwl_trajectory_cost([180, 20, 180], bt, seg) == pytest.approx(6666.67, rel=0.10)


def test_pwl_rejects_bad_segment_energy():
    seg = PWLSegments.build(table1_battery(), 10)
    with pytest.raises(DegradationError, match="negative"):
        pwl_cost(-np.ones((10, 1)), seg)
    with pytest.raises(DegradationError, match="overflow"):
        pwl_cost(np.full((10, 1), 25.0), seg)
    with pytest.raises(DegradationError):
        pwl_cost(np.zeros((9, 1)), seg)


def test_audit_flags_and_horizon_mismatch():
    bt = table1_battery()
    seg = PWLSegments.build(bt, 10)
    soc = np.array([180, 20, 180.0])
    w = np.zeros((10, 2))
    w[:8, 0] = 20.0
    rep = audit_linearization(soc, w, bt, seg, num_intervals=2)
    assert rep.rainflow_cost == pytest.approx(6666.67, abs=0.01)
    assert not rep.flagged
    rep = audit_linearization(soc, np.zeros((10, 2)), bt, seg, num_intervals=2)
    assert rep.flagged
    with pytest.raises(DegradationError, match="horizon mismatch"):
        audit_linearization(soc, w, bt, seg, num_intervals=3)


# --------------------------------------------------------------------------
# rainflow oracle and properties


def test_rainflow_matches_brute_force_on_random_walks():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        n = int(rng.integers(2, 201))
        walk = np.round(np.cumsum(rng.normal(size=n)), 3)
        assert kernel_inventory(walk) == brute_force_rainflow(walk)


def test_kernel_python_fallback_agrees():
    rng = np.random.default_rng(5)
    walk = np.cumsum(rng.normal(size=300))
    fast = rainflow_kernel(turning_points_kernel(walk))
    slow_tp = getattr(turning_points_kernel, "py_func", turning_points_kernel)(walk)
    slow = getattr(rainflow_kernel, "py_func", rainflow_kernel)(slow_tp)
    for a, b in zip(fast, slow):
        np.testing.assert_array_equal(a, b)


walks = st.lists(st.floats(-50, 50, allow_nan=False, allow_infinity=False), min_size=2, max_size=60)


@settings(max_examples=200, deadline=None)
@given(walks, st.floats(-100, 100, allow_nan=False))
def test_translation_invariance(series, shift):
    x = np.round(np.asarray(series), 6)
    a = rainflow_count(x, 100.0)
    b = rainflow_count(x + round(shift, 6), 100.0)
    assert len(a) == len(b)
    for (da, wa), (db, wb) in zip(a, b):
        assert da == pytest.approx(db, abs=1e-9)
        assert wa == wb


@settings(max_examples=200, deadline=None)
@given(walks, st.sampled_from([0.5, 2.0, 4.0, 0.25]))
def test_amplitude_scaling(series, k):
    x = np.asarray(series)
    a = rainflow_count(x, 100.0)
    b = rainflow_count(k * x, 100.0)
    assert [w for _, w in a] == [w for _, w in b]
    np.testing.assert_allclose([k * d for d, _ in a], [d for d, _ in b], rtol=1e-12, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(walks)
def test_weight_balance(series):
    # every turning-point step is covered exactly once: twice the full-cycle
    # range plus the half-cycle ranges equals the total variation when no
    # cycles are merged
    x = np.asarray(series)
    ranges, weights, _ = rainflow_kernel(turning_points_kernel(x))
    tv = np.abs(np.diff(turning_points_kernel(x))).sum()
    assert 2 * weights @ ranges == pytest.approx(tv, rel=1e-9, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(walks)
def test_closed_trajectory_reversal(series):
    x = np.asarray(series + series[:1])
    fwd = sorted(d for d, w in rainflow_count(x, 100.0) if w == 1.0)
    back = sorted(d for d, w in rainflow_count(x[::-1], 100.0) if w == 1.0)
    np.testing.assert_allclose(fwd, back, atol=1e-12)


def test_audit_allows_refilled_segments():
    bt = table1_battery()
    seg = PWLSegments.build(bt, 10)
    w = np.zeros((10, 1))
    w[0, 0] = 30.0  # drawn, refilled and drawn again within one interval
    rep = audit_linearization(np.array([90, 75, 90, 75.0]), w, bt, seg, num_intervals=1)
    assert rep.pwl_cost == pytest.approx(seg.costs[0] * 30.0)


def test_empty_and_flat_series():
    assert rainflow_count([5.0], 10.0) == []
    assert rainflow_count([5.0, 5.0, 5.0], 10.0) == []
    with pytest.raises(DegradationError):
        rainflow_count([1, 2], 0.0)
