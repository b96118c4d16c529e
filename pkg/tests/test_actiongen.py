import numpy as np
import pytest

from conftest import loads_of, make_unit, ramp_pair, single_bus
from ucrl.actiongen import (
    ActionConfig,
    CandidateGenerator,
    base_action,
    build_candidate_set,
    compute_locks,
    lock_window_lengths,
)
from ucrl.env import make_state, reset
from ucrl.exact import ChainState, step_period
from ucrl.model import LoadScenario, Schedule, validate_schedule


class _S:
    def __init__(self, v, p, u, t=1):
        self.v, self.p, self.u, self.t = np.array(v), np.array(p, float), np.array(u), t


def _lock_grid(**kw):
    return single_bus([make_unit(**kw)])


def test_on_unit_inside_min_up_is_locked():
    g = _lock_grid(ut=4)
    assert 0 in compute_locks(_S([1], [100], [2]), g).theta


def test_off_unit_past_min_down_is_free():
    g = _lock_grid(dt=4, init_status=0)
    assert 0 not in compute_locks(_S([0], [0], [10]), g).theta


def test_shutdown_ramp_locks_unit():
    g = _lock_grid(ut=2, sd=80)
    assert 0 in compute_locks(_S([1], [120], [5]), g).theta
    assert 0 not in compute_locks(_S([1], [70], [5]), g).theta


def test_lock_window_lengths():
    # horizon longer than the outstanding lock: window is min(UT, H - t)
    np.testing.assert_array_equal(lock_window_lengths([4, 4, 1], [2, 0, 0], 5, t=2), [3, 3, 1])
    # horizon not longer than the outstanding lock: no window
    np.testing.assert_array_equal(lock_window_lengths([4], [6], 5), [0])


def test_default_horizon_is_two():
    assert ActionConfig().horizon == 2
    assert (ActionConfig().search_down, ActionConfig().search_up, ActionConfig().top_k) == (1, 1, 1)


def test_first_period_single_unit_is_on():
    g = single_bus([make_unit(p_min=50, p_max=200)])
    loads = loads_of([120, 130, 140])
    v = base_action(make_state(0, ChainState.initial(g), loads), g, loads, 2, 2.0)
    np.testing.assert_array_equal(v, [1])


def test_lookahead_commits_ahead_of_a_spike():
    g = ramp_pair(ru_b=60.0)
    loads = loads_of([80, 180])
    s = make_state(0, ChainState.initial(g), loads)
    np.testing.assert_array_equal(base_action(s, g, loads, 2, 0.0), [1, 1])
    # a myopic one-period lookahead leaves the dear unit off
    np.testing.assert_array_equal(base_action(s, g, loads, 1, 0.0), [1, 0])


def test_four_candidates_when_base_toggles_once():
    # the base starts the unit with the cheaper startup; the toggle neighbourhood
    # prefers the lower priority index, so every z adds a new vector
    base_unit = make_unit(id=0, p_max=150, p_min=10, a=0, b=10, c=0, ru=100, rd=100,
                          init_power=80)
    others = [make_unit(id=k, p_max=100, p_min=50, a=0, b=b, c=0, su=50, ru=50, stairs=(st,),
                        init_status=0, init_duration=5)
              for k, b, st in ((1, 20, 5000), (2, 21, 1000), (3, 22, 5000))]
    g = single_bus([base_unit] + others)
    loads = loads_of([120, 230])
    cs = build_candidate_set(make_state(0, ChainState.initial(g), loads), g, loads)
    np.testing.assert_array_equal(cs.base, [1, 0, 1, 0])
    assert cs.X == 1 and cs.z_range == (0, 2)
    assert len(cs) == 4 == cs.raw_count
    assert sorted(tuple(a) for a in cs) == [(1, 0, 0, 0), (1, 0, 1, 0), (1, 1, 0, 0),
                                            (1, 1, 1, 0)]


def test_status_quo_base_appears_once():
    g = single_bus([make_unit(p_min=10, p_max=200)])
    loads = loads_of([100, 100])
    cs = build_candidate_set(make_state(0, ChainState.initial(g), loads), g, loads)
    assert cs.X == 0
    assert [tuple(a) for a in cs].count((1,)) == 1
    assert cs.raw_count == len(cs) + 1


def test_no_period_left_gives_empty_set():
    g = single_bus([make_unit()])
    loads = loads_of([100])
    cs = build_candidate_set(make_state(1, ChainState.initial(g), loads), g, loads)
    assert cs.empty and len(cs) == 0


def _walk_states(grid, loads, n, seed):
    gen = CandidateGenerator(grid, loads)
    rng = np.random.default_rng(seed)
    states = []
    s = reset(grid, loads, 0)
    while len(states) < n:
        cs = gen(s)
        states.append((s, cs))
        if cs.empty or s.t + 1 >= loads.horizon:
            s = reset(grid, loads, int(rng.integers(loads.n_days)))
            continue
        a = cs[int(rng.integers(len(cs)))]
        s = make_state(s.t + 1, step_period(grid, s.chain, a, loads.demand[s.t]).state, loads)
    return states


@pytest.fixture(scope="module")
def walked(grid5, loads5):
    return _walk_states(grid5, loads5, 1000, seed=11)


def test_every_candidate_is_feasible_and_respects_locks(grid5, loads5, walked):
    n_checked = 0
    for s, cs in walked:
        assert len(cs) <= 3 * 1 + 1
        for a, pv in zip(cs, cs.provenance):
            res = step_period(grid5, s.chain, a, loads5.demand[s.t])
            assert res is not None
            sched = Schedule(a[None, :], res.state.p[None, :])
            rep = validate_schedule(grid5, LoadScenario(loads5.demand[s.t:s.t + 1]), sched,
                                    v0=s.v, p0=s.p, u0=s.u)
            assert rep.feasible, list(rep)
            changed = set(np.flatnonzero(a != s.v).tolist())
            assert not changed & cs.theta
            if pv.source == "toggle":
                assert len(changed) == pv.z
            n_checked += 1
    assert n_checked > 1000


def test_candidates_distinct_and_ordered(walked):
    for _, cs in walked:
        keys = [tuple(a) for a in cs]
        assert len(set(keys)) == len(keys)
        order = [(pv.source != "base", pv.z, pv.rank) for pv in cs.provenance]
        assert order == sorted(order)


def test_deterministic(grid5, loads5, walked):
    for s, cs in walked[::50]:
        again = build_candidate_set(s, grid5, loads5)
        assert [tuple(a) for a in again] == [tuple(a) for a in cs]
        assert again.provenance == cs.provenance


def test_base_is_included_when_feasible(grid5, loads5, walked):
    for s, cs in walked[::25]:
        if cs.base is not None:
            assert tuple(cs[0]) == tuple(cs.base)
            assert cs.provenance[0].source == "base"


def test_unavailable_units_never_proposed(grid5, loads5):
    cfg = ActionConfig(unavailable=frozenset({2}))
    gen = CandidateGenerator(grid5, loads5, cfg)
    s = reset(grid5, loads5, 0)
    for _ in range(48):
        cs = gen(s)
        assert not cs.empty
        assert all(a[2] == 0 for a in cs)
        s = make_state(s.t + 1, step_period(grid5, s.chain, cs[0], loads5.demand[s.t]).state,
                       loads5)
