import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_unit, single_bus
from ucrl.dispatch import (
    TAU_KKT,
    DispatchProblem,
    dispatch,
    effective_bounds,
    equal_marginal,
    solve_ed,
)
from ucrl.model import GridSpec, Line


def _problem(units, demand, v, p_prev=None, v_prev=None, reserve=0.0):
    g = single_bus(units)
    n = len(units)
    return DispatchProblem(g, np.array([float(demand)]), np.asarray(v),
                           np.zeros(n) if p_prev is None else np.asarray(p_prev, float),
                           np.ones(n, int) if v_prev is None else np.asarray(v_prev),
                           reserve_req=reserve)


def test_bounds_ramp_up_binds():
    pr = _problem([make_unit(p_max=200, p_min=50, ru=30)], 100, [1], [100.0], [1])
    lo, hi = effective_bounds(pr)
    assert hi[0] == 130.0 and lo[0] == 50.0


def test_bounds_startup_ramp():
    pr = _problem([make_unit(p_max=200, p_min=50, su=80)], 60, [1], [0.0], [0])
    lo, hi = effective_bounds(pr)
    assert (lo[0], hi[0]) == (50.0, 80.0)


def test_bounds_off_unit():
    pr = _problem([make_unit()], 0, [0], [0.0], [0])
    lo, hi = effective_bounds(pr)
    assert lo[0] == 0.0 and hi[0] == 0.0


def test_equal_marginal_two_units():
    units = [make_unit(id=0, b=10, c=0.01, p_min=0, p_max=300),
             make_unit(id=1, b=10, c=0.02, p_min=0, p_max=300)]
    sol = solve_ed(_problem(units, 150, [1, 1], [150, 150]))
    assert sol.optimal
    np.testing.assert_allclose(sol.p, [100.0, 50.0], atol=1e-9)
    assert sol.price == pytest.approx(12.0)
    assert sol.kkt_residual <= TAU_KKT


def test_single_unit_takes_demand():
    sol = solve_ed(_problem([make_unit(p_min=50, p_max=200)], 120, [1], [120]))
    assert sol.p[0] == pytest.approx(120.0)


def test_infeasible_balance_has_witness():
    sol = solve_ed(_problem([make_unit(p_min=50, p_max=200)], 250, [1], [200]))
    assert not sol.optimal and sol.witness == "balance"
    sol = solve_ed(_problem([make_unit(p_min=50, p_max=200, ru=10)], 100, [1], [50]))
    assert sol.witness == "balance"


def test_linear_ties_fill_lowest_index_first():
    units = [make_unit(id=k, b=20, c=0.0, p_min=0, p_max=100) for k in range(3)]
    sol = solve_ed(_problem(units, 150, [1, 1, 1], [100, 100, 100]))
    np.testing.assert_allclose(sol.p, [100.0, 50.0, 0.0])


def test_reserve_is_a_predicate_not_a_constraint():
    sol = solve_ed(_problem([make_unit(p_min=50, p_max=200)], 190, [1], [190], reserve=19))
    assert sol.optimal and not sol.reserve_ok and not sol.feasible


def _grid_search(units, demand, lo, hi, step=0.01):
    p1 = np.arange(lo[0], hi[0] + step / 2, step)
    p2 = demand - p1
    ok = (p2 >= lo[1] - 1e-9) & (p2 <= hi[1] + 1e-9)
    if not ok.any():
        return None
    p1, p2 = p1[ok], p2[ok]
    u1, u2 = units
    cost = u1.a + u1.b * p1 + u1.c * p1 ** 2 + u2.a + u2.b * p2 + u2.c * p2 ** 2
    return cost.min()


def test_random_two_unit_vs_grid_search():
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(60):
        units = [make_unit(id=k, p_max=float(rng.uniform(60, 200)), p_min=float(rng.uniform(5, 40)),
                           a=float(rng.uniform(0, 200)), b=float(rng.uniform(5, 30)),
                           c=float(rng.choice([0.0, rng.uniform(0.001, 0.05)])),
                           ru=1e4, rd=1e4)
                 for k in range(2)]
        lo = np.array([u.p_min for u in units])
        hi = np.array([u.p_max for u in units])
        demand = float(rng.uniform(lo.sum(), hi.sum()))
        sol = solve_ed(_problem(units, demand, [1, 1], hi, [1, 1]))
        ref = _grid_search(units, demand, lo, hi)
        assert sol.optimal and ref is not None
        assert sol.production_cost <= ref * (1 + 1e-3)
        assert abs(sol.production_cost - ref) <= 1e-3 * ref
        assert sol.kkt_residual <= TAU_KKT
        checked += 1
    assert checked == 60


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 100_000))
def test_kkt_and_monotone_in_demand(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    b = rng.uniform(5, 30, n)
    c = rng.choice([0.0, 0.01, 0.03], n)
    lo = rng.uniform(0, 30, n)
    hi = lo + rng.uniform(10, 150, n)
    d1, d2 = np.sort(rng.uniform(lo.sum(), hi.sum(), 2))
    x1, lam1 = equal_marginal(b, c, lo, hi, d1)
    x2, lam2 = equal_marginal(b, c, lo, hi, d2)
    assert abs(x1.sum() - d1) < 1e-6
    assert np.all(x1 >= lo - 1e-9) and np.all(x1 <= hi + 1e-9)
    cost = lambda x: float(np.sum(b * x + c * x * x))
    assert cost(x2) >= cost(x1) - 1e-9
    assert lam2 >= lam1 - 1e-9
    # interior units sit at the system price
    g = b + 2 * c * x1
    inner = (x1 > lo + 1e-7) & (x1 < hi - 1e-7) & (c > 0)
    assert np.all(np.abs(g[inner] - lam1) < 1e-6)


def _three_bus(limit):
    units = [make_unit(id=0, bus=0, b=10, c=0.01, p_min=0, p_max=400),
             make_unit(id=1, bus=1, b=30, c=0.01, p_min=0, p_max=400)]
    lines = [Line(0, 1, 0.1, -limit, limit), Line(0, 2, 0.1, -limit, limit),
             Line(1, 2, 0.1, -limit, limit)]
    return GridSpec(n_buses=3, units=units, lines=lines, reserve_fraction=0.0)


def test_line_limit_activates():
    demand = np.array([0.0, 0.0, 300.0])
    free = dispatch(_three_bus(1000), demand, [1, 1], [1, 1], [200, 200])
    assert free.optimal
    tight_grid = _three_bus(150)
    flows_free = tight_grid.line_flows(free.p, demand)
    assert np.max(np.abs(flows_free)) > 150
    tight = dispatch(tight_grid, demand, [1, 1], [1, 1], [200, 200])
    assert tight.optimal
    flows = tight_grid.line_flows(tight.p, demand)
    assert np.max(np.abs(flows)) <= 150 + 1e-6
    assert np.max(np.abs(flows)) == pytest.approx(150, abs=1e-5)
    assert tight.production_cost > free.production_cost
    assert tight.kkt_residual <= 1e-5


def test_line_limits_unsatisfiable():
    units = [make_unit(id=0, bus=0, b=10, c=0.01, p_min=0, p_max=400)]
    g = GridSpec(n_buses=2, units=units, lines=[Line(0, 1, 0.1, -50, 50)], reserve_fraction=0.0)
    sol = dispatch(g, np.array([0.0, 100.0]), [1], [1], [100])
    assert not sol.optimal and sol.witness == "line_flow"
