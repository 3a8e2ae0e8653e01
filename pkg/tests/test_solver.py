import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bessmarket.solver import LinearProgram, check_optimality, mip_gap, revised_simplex, solve_lp, solve_mip


def vertex_oracle(c, A, b):
    """min c.x s.t. A x <= b, x >= 0 by enumerating every basic solution."""
    m, n = A.shape
    G = np.vstack([A, -np.eye(n)])
    h = np.concatenate([b, np.zeros(n)])
    best = np.inf
    for rows in itertools.combinations(range(m + n), n):
        M = G[list(rows)]
        if abs(np.linalg.det(M)) < 1e-9:
            continue
        x = np.linalg.solve(M, h[list(rows)])
        if np.all(G @ x <= h + 1e-9):
            best = min(best, float(c @ x))
    return best


def test_textbook_example():
    # max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18  ->  (2, 6), 36
    lp = LinearProgram([3, 5], A_ub=[[1, 0], [0, 2], [3, 2]], b_ub=[4, 12, 18], sense="max")
    res = revised_simplex(lp)
    assert res.ok
    assert res.objective == pytest.approx(36)
    np.testing.assert_allclose(res.x, [2, 6], atol=1e-9)
    # shadow prices of the textbook example
    np.testing.assert_allclose(res.duals_ub, [0, 1.5, 1], atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_simplex_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(2, 4), rng.integers(2, 5)
    A = rng.integers(-3, 6, size=(m, n)).astype(float)
    b = rng.integers(1, 10, size=m).astype(float)
    A = np.vstack([A, np.ones(n)])  # keeps the feasible set bounded
    b = np.append(b, 20.0)
    c = rng.integers(-5, 5, size=n).astype(float)
    ref = vertex_oracle(c, A, b)
    res = revised_simplex(LinearProgram(c, A_ub=A, b_ub=b))
    assert res.ok
    assert res.objective == pytest.approx(ref, abs=1e-7)
    assert check_optimality(LinearProgram(c, A_ub=A, b_ub=b), res)["ok"]


@pytest.mark.parametrize("seed", range(15))
def test_embedded_matches_highs_with_equalities_and_bounds(seed):
    rng = np.random.default_rng(seed)
    n = 6
    x0 = rng.uniform(0, 3, n)
    A_ub = rng.normal(size=(4, n))
    A_eq = rng.normal(size=(2, n))
    lp = LinearProgram(rng.normal(size=n), A_ub, A_ub @ x0 + 1, A_eq, A_eq @ x0,
                       lb=np.full(n, -1.0), ub=np.full(n, 5.0))
    a, h = solve_lp(lp, "embedded"), solve_lp(lp, "highs")
    assert a.ok and h.ok
    assert a.objective == pytest.approx(h.objective, abs=1e-7)
    assert lp.max_violation(a.x) <= 1e-7


def test_infeasible_and_unbounded_statuses():
    assert revised_simplex(LinearProgram([1, 1], A_ub=[[1, 1]], b_ub=[-1])).status == "infeasible"
    assert revised_simplex(LinearProgram([-1, 0], A_ub=[[0, 1]], b_ub=[1])).status == "unbounded"


def test_degenerate_cycling_instance_terminates():
    # Beale's example cycles under plain Dantzig pricing
    c = [-0.75, 150, -0.02, 6]
    A = [[0.25, -60, -0.04, 9], [0.5, -90, -0.02, 3], [0, 0, 1, 0]]
    res = revised_simplex(LinearProgram(c, A_ub=A, b_ub=[0, 0, 1]))
    assert res.ok
    assert res.objective == pytest.approx(-0.05)


def knapsack_dp(values, weights, cap):
    best = [0] * (cap + 1)
    for v, w in zip(values, weights):
        for c in range(cap, w - 1, -1):
            best[c] = max(best[c], best[c - w] + v)
    return best[cap]


@pytest.mark.parametrize("seed", range(12))
def test_branch_and_bound_matches_knapsack_dp(seed):
    rng = np.random.default_rng(seed)
    n = 10
    v = rng.integers(1, 30, n)
    w = rng.integers(1, 15, n)
    cap = int(w.sum() // 2)
    lp = LinearProgram(v, A_ub=[w], b_ub=[cap], ub=np.ones(n), sense="max")
    res = solve_mip(lp, range(n), backend="embedded", gap_target=0.0)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(knapsack_dp(v, w, cap))
    hi = solve_mip(lp, range(n), backend="highs", gap_target=0.0)
    assert hi.objective == pytest.approx(res.objective)


def test_branch_and_bound_is_deterministic():
    rng = np.random.default_rng(3)
    v, w = rng.integers(1, 30, 12), rng.integers(1, 15, 12)
    lp = LinearProgram(v, A_ub=[w], b_ub=[40], ub=np.ones(12), sense="max")
    a = solve_mip(lp, range(12), backend="embedded")
    b = solve_mip(lp, range(12), backend="embedded")
    np.testing.assert_array_equal(a.x, b.x)
    assert a.nodes == b.nodes


def test_mip_gap_definition():
    assert mip_gap(110, 100, "max") == pytest.approx(0.1)
    assert mip_gap(90, 100, "min") == pytest.approx(0.1)
    assert mip_gap(90, float("nan"), "min") == float("inf")


def test_invalid_problem_rejected():
    with pytest.raises(ValueError):
        LinearProgram([1, 2], A_ub=[[1, 2, 3]], b_ub=[1])
    with pytest.raises(ValueError):
        LinearProgram([1.0], lb=[2.0], ub=[1.0])
    with pytest.raises(ValueError):
        LinearProgram([np.nan])
