"""Candidate action sets built by optimisation.

For a state at period ``t`` the set holds

* the *base* action: first-period commitment of an H-period lookahead UC with
  a priority-weighted switching term, and
* for each toggle count ``z`` around the base action's toggle count ``X``, the
  ``K`` cheapest feasible single-period commitments changing exactly ``z``
  unlocked units (cheapness = change in priority index).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exact import (
    ChainState,
    SolveBudget,
    UcSubproblem,
    priority_commit_cost,
    solve_toggle_problem,
    solve_uc_bnb,
    step_period,
)
from .model import GridSpec, LoadScenario, priorities


@dataclass(frozen=True)
class ActionConfig:
    horizon: int = 2  # lookahead H
    search_down: int = 1  # Y-
    search_up: int = 1  # Y+
    top_k: int = 1  # K
    omega: float = 2.0  # switching weight for t > 0
    budget: SolveBudget = SolveBudget(wall_time=1.0)
    unavailable: frozenset = frozenset()  # units on outage, never committed


@dataclass(frozen=True, eq=False)
class LockWindows:
    theta: frozenset  # units that cannot change status at t+1
    sigma_up: np.ndarray  # on-periods owed after a startup, per unit
    sigma_dn: np.ndarray  # off-periods owed after a shutdown, per unit
    must_on: np.ndarray  # periods each unit must still stay on
    must_off: np.ndarray


def lock_window_lengths(min_time, must, horizon: int, t: int = 0) -> np.ndarray:
    """``min(min_time, H - t)`` where the horizon outlasts the initial lock, else 0."""
    min_time = np.asarray(min_time)
    return np.where(horizon > np.asarray(must), np.minimum(min_time, horizon - t), 0)


@dataclass(frozen=True)
class Provenance:
    source: str  # "base" or "toggle"
    z: int
    rank: int


@dataclass(frozen=True, eq=False)
class CandidateSet:
    members: tuple  # commitment vectors, base first then by (z, rank)
    provenance: tuple
    base: Optional[np.ndarray]
    X: Optional[int]
    z_range: tuple[int, int]
    theta: frozenset
    raw_count: int  # candidates found before de-duplication

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __getitem__(self, k):
        return self.members[k]

    @property
    def empty(self) -> bool:
        return not self.members


def compute_locks(state, grid: GridSpec, horizon: int = 2) -> LockWindows:
    """Units whose status is frozen for the next period, and lock lengths.

    ``state`` is anything with ``v``, ``p`` and ``u`` vectors.
    """
    v = np.asarray(state.v)
    u = np.asarray(state.u)
    p = np.asarray(state.p, dtype=float)
    must_on = v * np.maximum(0, grid.min_up - u)
    must_off = (1 - v) * np.maximum(0, grid.min_down - u)
    no_ramp_down = (v == 1) & (p > grid.shutdown_ramp + 1e-6)
    theta = frozenset(int(i) for i in np.flatnonzero((must_on > 0) | (must_off > 0) | no_ramp_down))
    return LockWindows(theta, lock_window_lengths(grid.min_up, must_on, horizon),
                       lock_window_lengths(grid.min_down, must_off, horizon), must_on, must_off)


def _as_chain(state) -> ChainState:
    if isinstance(state, ChainState):
        return state
    return state.chain


def base_action(state, grid: GridSpec, loads: LoadScenario, horizon: int, omega: float,
                budget: SolveBudget = SolveBudget(wall_time=1.0),
                bound_cache: Optional[dict] = None,
                unavailable: frozenset = frozenset()) -> Optional[np.ndarray]:
    """First-period commitment of the lookahead UC from ``state`` (``None`` if infeasible).

    ``state.t`` is the global period index; the window covers rows
    ``t .. t+H-1`` of ``loads.demand`` (periods ``t+1 .. t+H``), truncated at
    the end of the series.
    """
    t = int(state.t)
    stop = min(t + horizon, loads.horizon)
    if stop <= t:
        return None
    demand = loads.demand[t:stop]
    H = stop - t
    w = omega if t > 0 else 0.0
    sub = UcSubproblem(grid, demand, start=_as_chain(state),
                       commit_cost=priority_commit_cost(grid, H, w),
                       excluded_units=frozenset(unavailable))
    res = solve_uc_bnb(sub, budget, bound_cache)
    if not res.found:
        return None
    return res.schedule.v[0].copy()


def build_candidate_set(state, grid: GridSpec, loads: LoadScenario,
                        config: ActionConfig = ActionConfig(),
                        bound_cache: Optional[dict] = None,
                        rho: Optional[np.ndarray] = None) -> CandidateSet:
    """The down-selected feasible action subset for ``state``.

    Empty when the series has no next period or nothing is feasible.
    """
    t = int(state.t)
    N = grid.n_units
    locks = compute_locks(state, grid, config.horizon)
    if t >= loads.horizon:
        return CandidateSet((), (), None, None, (0, -1), locks.theta, 0)
    if rho is None:
        rho = priorities(grid)
    chain = _as_chain(state)
    v = np.asarray(chain.v, dtype=int)
    base = base_action(state, grid, loads, config.horizon, config.omega, config.budget,
                       bound_cache, config.unavailable)
    members, prov, seen = [], [], set()
    raw = 0
    if base is not None:
        X = int(np.abs(base - v).sum())
        members.append(base)
        prov.append(Provenance("base", X, 0))
        seen.add(tuple(base))
        raw += 1
    else:
        X = None
    x_ref = 0 if X is None else X
    z_lo, z_hi = max(x_ref - config.search_down, 0), min(x_ref + config.search_up, N)
    demand_next = loads.demand[t]
    frozen = locks.theta | frozenset(config.unavailable)
    for z in range(z_lo, z_hi + 1):
        sols = solve_toggle_problem(grid, chain, demand_next, z, config.top_k, frozen, rho)
        for rank, (vn, _) in enumerate(sols):
            raw += 1
            key = tuple(vn)
            if key in seen:
                continue
            seen.add(key)
            members.append(vn)
            prov.append(Provenance("toggle", z, rank))
    return CandidateSet(tuple(members), tuple(prov), base, X, (z_lo, z_hi), locks.theta, raw)


class CandidateGenerator:
    """Candidate-set builder bound to one grid and load series, with caches.

    Candidate sets are a pure function of the state, so they are memoised on
    the state's bytes.
    """

    def __init__(self, grid: GridSpec, loads: LoadScenario, config: ActionConfig = ActionConfig(),
                 max_cache: int = 200_000):
        self.grid = grid
        self.loads = loads
        self.config = config
        self.rho = priorities(grid)
        self._bounds: dict = {}
        self._sets: dict = {}
        self.max_cache = max_cache

    def __call__(self, state) -> CandidateSet:
        key = state.key()
        hit = self._sets.get(key)
        if hit is not None:
            return hit
        cs = build_candidate_set(state, self.grid, self.loads, self.config, self._bounds, self.rho)
        if len(self._sets) >= self.max_cache:
            self._sets.clear()
        self._sets[key] = cs
        return cs

    def feasible(self, state, action) -> bool:
        """Feasibility gate of a single next-period commitment."""
        if int(state.t) >= self.loads.horizon:
            return False
        return step_period(self.grid, _as_chain(state), action, self.loads.demand[int(state.t)]) \
            is not None
