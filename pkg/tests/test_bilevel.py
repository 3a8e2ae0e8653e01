import numpy as np
import pytest
from conftest import TOY_FAMILY, grid_resolution, offer_grid_oracle, toy
from scipy.optimize import linprog

from bessmarket.bilevel import UlpSpec, price_cap, reformulate_kkt, solve_bilevel
from bessmarket.datasets import toy_system
from bessmarket.model import BatteryUnit


@pytest.mark.parametrize("name", sorted(TOY_FAMILY))
def test_toy_matches_offer_grid_oracle(name):
    model, spec = toy(name)
    rep = solve_bilevel(model, spec, gap=0.0)
    assert rep.status == "optimal"
    cap = price_cap(model)
    best, _ = offer_grid_oracle(model, spec.products, cap)
    # continuous offers can only do better than the grid, by at most one cell
    assert rep.objective >= best - 1e-6
    assert rep.objective <= best + grid_resolution(model, cap, spec.products)


def test_pivotal_price_is_capped():
    model, spec = toy("battery-pivotal")
    rep = solve_bilevel(model, spec, gap=0.0)
    assert rep.clearing.lmp[0, 0] <= price_cap(model) + 1e-6
    assert rep.big_m.ok


def test_price_taker_matches_lp():
    # a 5 MW battery never moves the marginal unit, so prices are exogenous
    T = 4
    bt = BatteryUnit("bess", "1", 5, 5, 10, 0, 10, 5)
    model = toy_system([("1", 100, 10.0), ("1", 100, 30.0)], [50, 150, 60, 160], battery=bt, T=T)
    rep = solve_bilevel(model, UlpSpec(("energy",)), gap=0.0)
    lmp = np.array([10, 30, 10, 30.0])
    np.testing.assert_allclose(rep.clearing.lmp[0], lmp, atol=1e-6)
    # x = [d(T), c(T), soc(T+1)]; maximise lmp.(d - c)
    n = 3 * T + 1
    cost = np.concatenate([-lmp, lmp, np.zeros(T + 1)])
    A_eq, b_eq = [], []
    for t in range(T):
        row = np.zeros(n)
        row[2 * T + t + 1], row[2 * T + t], row[t], row[T + t] = 1, -1, 1 / 0.95, -0.95
        A_eq.append(row)
        b_eq.append(0.0)
    for k, v in ((2 * T, 5.0), (3 * T, 5.0)):
        row = np.zeros(n)
        row[k] = 1
        A_eq.append(row)
        b_eq.append(v)
    bounds = [(0, 5)] * (2 * T) + [(0, 10)] * (T + 1)
    ref = linprog(cost, A_eq=np.array(A_eq), b_eq=b_eq, bounds=bounds, method="highs")
    assert rep.objective == pytest.approx(-ref.fun, rel=1e-6, abs=1e-6)


def test_repeatable_incumbent():
    model, spec = toy("two-step-supply")
    a = solve_bilevel(model, spec, gap=0.0)
    b = solve_bilevel(model, spec, gap=0.0)
    for p in a.offers["bess"].quantity:
        np.testing.assert_array_equal(a.offers["bess"].quantity[p], b.offers["bess"].quantity[p])
        np.testing.assert_array_equal(a.offers["bess"].price[p], b.offers["bess"].price[p])


def test_audits_on_solution():
    model, spec = toy("with-reserve")
    rep = solve_bilevel(model, spec, gap=0.0)
    assert rep.complementarity <= 1e-6
    assert rep.decomposition_error <= 1e-6
    assert rep.round_trip["status"] in ("identical", "degenerate-tie")


def test_degradation_never_raises_profit():
    bt = BatteryUnit("bess", "1", 10, 10, 40, 4, 36, 20)
    model = toy_system([("1", 100, 10.0), ("1", 100, 30.0)], [50, 150, 60, 160], battery=bt, T=4)
    off = solve_bilevel(model, UlpSpec(("energy",)), gap=0.0)
    on = solve_bilevel(model, UlpSpec(("energy",), degradation=True), gap=0.0)
    assert on.objective <= off.objective + 1e-6
    assert on.revenue["bess"].degradation_cost.sum() >= 0


def test_spec_validation():
    with pytest.raises(ValueError, match="no enabled market"):
        UlpSpec(())
    with pytest.raises(ValueError, match="unknown markets"):
        UlpSpec(("capacity",))


def test_disabled_products_have_no_columns():
    model, _ = toy("gen-marginal")
    prog = reformulate_kkt(model, UlpSpec(("energy",)))
    assert prog.removed_cols.size == 3  # reserve, regCap, regMileage in one interval
    full = reformulate_kkt(model, UlpSpec(("energy", "reserve", "regCap", "regMileage")))
    assert full.num_binaries > prog.num_binaries


def test_infeasible_system_reported():
    bt = BatteryUnit("bess", "1", 1, 1, 4, 0, 4, 2)
    model = toy_system([("1", 10, 20.0)], 50, battery=bt)
    rep = solve_bilevel(model, UlpSpec(("energy",)))
    assert rep.status == "infeasible"
    assert not rep.has_solution
    assert rep.message
