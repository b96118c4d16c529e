"""Episodic UC environment over candidate action sets.

One episode is one day of ``periods_per_day`` periods. The state holds the
previous operating point plus the demand forecast for the next ``k`` periods;
an action is a commitment vector for the next period drawn from the state's
candidate set. The transition dispatches that commitment and the reward is
the negative operating cost, or ``-zeta`` when the follow-up state has no
feasible candidate (terminal).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .actiongen import ActionConfig, CandidateGenerator, CandidateSet
from .exact import ChainState, step_period
from .model import GridSpec, LoadScenario, UCError, production_cost


class ContractViolation(UCError):
    """An action outside the feasible set was passed to the environment."""


@dataclass(frozen=True, eq=False)
class MdpState:
    t: int  # global period index; the next period to schedule is t + 1
    v: np.ndarray
    p: np.ndarray
    u: np.ndarray
    d: np.ndarray  # total demand forecast for periods t+1 .. t+k
    p_bar: np.ndarray
    load: Optional[float] = None

    @property
    def chain(self) -> ChainState:
        return ChainState(self.v, self.p, self.u, self.p_bar, self.load)

    def key(self) -> bytes:
        """Hashable identity used for caching candidate sets."""
        return b"|".join([
            np.int64(self.t).tobytes(), np.asarray(self.v, np.int64).tobytes(),
            np.asarray(self.p, float).tobytes(), np.asarray(self.u, np.int64).tobytes(),
            np.asarray(self.p_bar, float).tobytes(),
            np.float64(np.nan if self.load is None else self.load).tobytes(),
        ])


@dataclass(frozen=True, eq=False)
class Transition:
    state: MdpState
    action: np.ndarray
    reward: float
    next_state: MdpState
    next_candidates: CandidateSet
    terminal: bool
    cost: float  # operating cost of the period (even on a terminal step)
    unit_costs: np.ndarray  # N x 3: production, startup, shutdown


def forecast(loads: LoadScenario, t: int, k: int) -> np.ndarray:
    """Total demand of periods ``t+1 .. t+k``, zero past the end of the series."""
    out = np.zeros(k)
    tot = loads.total
    stop = min(t + k, len(tot))
    if stop > t:
        out[: stop - t] = tot[t:stop]
    return out


def default_zeta(grid: GridSpec, periods_per_day: int = 24) -> float:
    """Terminal penalty: ten days of every unit at full output.

    Must exceed the discounted cost of carrying on (about ``1/(1-gamma)``
    periods), otherwise ending an episode early looks attractive.
    """
    return 10.0 * periods_per_day * full_output_cost(grid)


def full_output_cost(grid: GridSpec) -> float:
    """Cost of one period with every unit at maximum output."""
    return float(sum(production_cost(u, 1, u.p_max, tol=np.inf) for u in grid.units))


def make_state(t: int, chain: ChainState, loads: LoadScenario) -> MdpState:
    return MdpState(int(t), np.asarray(chain.v, dtype=int), np.asarray(chain.p, dtype=float),
                    np.asarray(chain.u, dtype=int), forecast(loads, t, loads.forecast_window),
                    np.asarray(chain.p_bar, dtype=float), chain.load)


def reset(grid: GridSpec, loads: LoadScenario, day: int,
          carryover: Optional[MdpState] = None) -> MdpState:
    """Start state of ``day`` (0-based), from the grid's initial condition or a carried state.

    A carried state keeps its operating point; only the period index and the
    forecast move to the new day.
    """
    if not 0 <= day < loads.n_days:
        raise ValueError(f"day {day} outside 0..{loads.n_days - 1}")
    t0 = day * loads.periods_per_day
    chain = ChainState.initial(grid) if carryover is None else carryover.chain
    return make_state(t0, chain, loads)


def _unit_costs(grid: GridSpec, prev: ChainState, nxt: ChainState) -> np.ndarray:
    v, p = nxt.v, nxt.p
    out = np.zeros((grid.n_units, 3))
    out[:, 0] = grid.a * v + grid.b * p + grid.c * p * p
    for i in np.flatnonzero(v > prev.v):
        u = grid.units[i]
        out[i, 1] = u.startup_stairs[min(u.n_stairs, int(prev.u[i])) - 1]
    out[:, 2] = grid.shutdown_cost * np.maximum(0, prev.v - v)
    return out


class UCEnv:
    """Environment bound to a grid, a load series and a candidate generator."""

    def __init__(self, grid: GridSpec, loads: LoadScenario,
                 config: ActionConfig = ActionConfig(), zeta: Optional[float] = None,
                 generator: Optional[CandidateGenerator] = None):
        self.grid = grid
        self.loads = loads
        self.config = config
        self.zeta = default_zeta(grid, loads.periods_per_day) if zeta is None else float(zeta)
        self.candidates = generator or CandidateGenerator(grid, loads, config)

    @property
    def n_days(self) -> int:
        return self.loads.n_days

    @property
    def periods_per_day(self) -> int:
        return self.loads.periods_per_day

    def reset(self, day: int, carryover: Optional[MdpState] = None) -> MdpState:
        return reset(self.grid, self.loads, day, carryover)

    def step(self, state: MdpState, action) -> Transition:
        """Apply ``action`` (commitment for period ``state.t + 1``).

        Raises :class:`ContractViolation` when the action is infeasible.
        """
        a = np.asarray(action, dtype=int)
        if a.shape != (self.grid.n_units,) or np.any((a != 0) & (a != 1)):
            raise ContractViolation(f"malformed action {action!r}")
        if any(a[i] for i in self.config.unavailable):
            raise ContractViolation("action commits a unit on outage")
        t = int(state.t)
        if t >= self.loads.horizon:
            raise ContractViolation("no period left to schedule")
        prev = state.chain
        res = step_period(self.grid, prev, a, self.loads.demand[t])
        if res is None:
            raise ContractViolation(f"infeasible action {a.tolist()} at t={t}")
        nxt = make_state(t + 1, res.state, self.loads)
        cands = self.candidates(nxt)
        # running out of data ends the episode but is not a failure
        terminal = cands.empty and t + 1 < self.loads.horizon
        reward = -self.zeta if terminal else -res.cost
        return Transition(state, a, float(reward), nxt, cands, terminal, res.cost,
                          _unit_costs(self.grid, prev, res.state))


def encode_features(state: MdpState, action, grid: GridSpec, u_cap: Optional[int] = None,
                    demand_scale: Optional[float] = None, periods_per_day: int = 24) -> np.ndarray:
    """Fixed-length network input ``[cos, sin, v, p/pmax, u/u_cap, forecast, action]``.

    Length ``4N + k + 2``. Time of day enters as a point on the unit circle so
    hour 23 sits next to hour 0.
    """
    if u_cap is None:
        u_cap = max(max(u.min_up, u.min_down, u.n_stairs) for u in grid.units)
    if demand_scale is None:
        demand_scale = float(np.sum(grid.p_max))
    ang = 2.0 * np.pi * (state.t % periods_per_day) / periods_per_day
    return np.concatenate([
        [np.cos(ang), np.sin(ang)],
        np.asarray(state.v, dtype=float),
        np.asarray(state.p, dtype=float) / grid.p_max,
        np.minimum(np.asarray(state.u, dtype=float), u_cap) / u_cap,
        np.asarray(state.d, dtype=float) / demand_scale,
        np.asarray(action, dtype=float),
    ])


TRACE_FIELDS = ["t", "unit", "v", "p", "cost_production", "cost_startup", "cost_shutdown",
                "reward", "terminal"]


def trace_rows(transitions) -> list[dict]:
    """Per-unit rows of an episode trace (``t`` is the 1-based scheduled period)."""
    rows = []
    for tr in transitions:
        for i in range(len(tr.action)):
            rows.append({
                "t": tr.next_state.t, "unit": i + 1, "v": int(tr.next_state.v[i]),
                "p": float(tr.next_state.p[i]),
                "cost_production": float(tr.unit_costs[i, 0]),
                "cost_startup": float(tr.unit_costs[i, 1]),
                "cost_shutdown": float(tr.unit_costs[i, 2]),
                "reward": tr.reward, "terminal": int(tr.terminal),
            })
    return rows


def write_trace(path, transitions) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
        w.writeheader()
        w.writerows(trace_rows(transitions))
