"""Domain types and cost/constraint kernels for deterministic unit commitment.

Conventions used throughout the package:

* units, buses and lines are indexed from 0 in code (files use 1-based bus
  numbers, see :mod:`ucrl.io`);
* a schedule row ``t`` (0-based) is operating period ``t + 1``; period 0 is
  the initial condition stored on each :class:`UnitSpec`;
* one period is one hour, so ramp rates in MW/h are MW per period.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

# absolute tolerance on power quantities (MW)
TAU_FEAS = 1e-6

CONSTRAINT_KINDS = (
    "balance",
    "reserve",
    "gen_limits",
    "ramp_up",
    "ramp_down",
    "min_up",
    "min_down",
    "line_flow",
)


class UCError(Exception):
    """Base class for errors raised by this package."""


class InvalidDispatchError(UCError, ValueError):
    pass


class InvalidUnitError(UCError, ValueError):
    pass


class StructuralError(UCError, ValueError):
    """Inconsistent dimensions or malformed input data."""


class IslandingError(UCError):
    """The transmission network is not connected."""


@dataclass(frozen=True)
class UnitSpec:
    """Physical and cost data of one thermal generator.

    ``startup_stairs`` holds the staircase startup cost indexed by the number
    of periods the unit has been offline (element ``k`` applies after ``k+1``
    periods, the last element applies to any longer outage).
    """

    id: int
    bus: int
    p_max: float
    p_min: float
    a: float
    b: float
    c: float
    startup_stairs: tuple[float, ...]
    shutdown_cost: float
    ramp_up: float
    ramp_down: float
    startup_ramp: float
    shutdown_ramp: float
    min_up: int
    min_down: int
    init_status: int
    init_duration: int
    init_power: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "startup_stairs", tuple(float(x) for x in self.startup_stairs))
        if self.p_min > self.p_max or self.p_min < 0:
            raise InvalidUnitError(f"unit {self.id}: need 0 <= p_min <= p_max")
        if not self.startup_stairs:
            raise InvalidUnitError(f"unit {self.id}: startup_stairs must not be empty")
        if any(x > y for x, y in zip(self.startup_stairs, self.startup_stairs[1:])):
            raise InvalidUnitError(f"unit {self.id}: startup_stairs must be non-decreasing")
        if min(self.ramp_up, self.ramp_down, self.startup_ramp, self.shutdown_ramp) < 0:
            raise InvalidUnitError(f"unit {self.id}: ramp limits must be >= 0")
        if not (self.p_min <= self.startup_ramp <= self.p_max
                and self.p_min <= self.shutdown_ramp <= self.p_max):
            raise InvalidUnitError(f"unit {self.id}: startup/shutdown ramp outside [p_min, p_max]")
        if self.min_up < 1 or self.min_down < 1:
            raise InvalidUnitError(f"unit {self.id}: min_up and min_down must be >= 1")
        if self.init_status not in (0, 1):
            raise InvalidUnitError(f"unit {self.id}: init_status must be 0 or 1")
        if self.init_duration < 1:
            raise InvalidUnitError(f"unit {self.id}: init_duration must be >= 1")
        if self.init_power is not None:
            if self.init_status == 0 and self.init_power != 0:
                raise InvalidUnitError(f"unit {self.id}: offline unit with nonzero init_power")
            if self.init_status == 1 and not (self.p_min <= self.init_power <= self.p_max):
                raise InvalidUnitError(f"unit {self.id}: init_power outside [p_min, p_max]")

    @property
    def n_stairs(self) -> int:
        return len(self.startup_stairs)

    @property
    def p0(self) -> float:
        """Output in period 0; defaults to ``p_min`` for a committed unit."""
        if self.init_power is not None:
            return float(self.init_power)
        return self.init_status * self.p_min

    @property
    def must_on(self) -> int:
        """Periods the unit must stay on at the start of the horizon."""
        return self.init_status * max(0, self.min_up - self.init_duration)

    @property
    def must_off(self) -> int:
        return (1 - self.init_status) * max(0, self.min_down - self.init_duration)


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    reactance: float
    flow_min: float
    flow_max: float


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Network, fleet and reserve policy.

    ``ptdf_unit`` (N x L) and ``ptdf_load`` (M x L) are computed from the line
    reactances when not supplied.
    """

    n_buses: int
    units: tuple[UnitSpec, ...]
    lines: tuple[Line, ...] = ()
    slack_bus: int = 0
    reserve_fraction: float = 0.1
    ptdf_unit: Optional[np.ndarray] = None
    ptdf_load: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        object.__setattr__(self, "lines", tuple(self.lines))
        if not 0 <= self.slack_bus < self.n_buses:
            raise StructuralError(f"slack bus {self.slack_bus} outside 0..{self.n_buses - 1}")
        for u in self.units:
            if not 0 <= u.bus < self.n_buses:
                raise StructuralError(f"unit {u.id} sits on unknown bus {u.bus}")
        for k, ln in enumerate(self.lines):
            if ln.reactance <= 0:
                raise StructuralError(f"line {k}: reactance must be > 0")
            if not ln.flow_min <= 0 <= ln.flow_max:
                raise StructuralError(f"line {k}: need flow_min <= 0 <= flow_max")
            if not (0 <= ln.from_bus < self.n_buses and 0 <= ln.to_bus < self.n_buses):
                raise StructuralError(f"line {k}: unknown bus")
        if self.ptdf_unit is None or self.ptdf_load is None:
            gp, gd = compute_ptdf(self)
            object.__setattr__(self, "ptdf_unit", gp)
            object.__setattr__(self, "ptdf_load", gd)
        for arr in (self.ptdf_unit, self.ptdf_load):
            arr.setflags(write=False)
        # cached vectors used by the hot loops
        cols = {
            "p_max": [u.p_max for u in self.units],
            "p_min": [u.p_min for u in self.units],
            "a": [u.a for u in self.units],
            "b": [u.b for u in self.units],
            "c": [u.c for u in self.units],
            "ramp_up": [u.ramp_up for u in self.units],
            "ramp_down": [u.ramp_down for u in self.units],
            "startup_ramp": [u.startup_ramp for u in self.units],
            "shutdown_ramp": [u.shutdown_ramp for u in self.units],
            "shutdown_cost": [u.shutdown_cost for u in self.units],
        }
        arrays = {}
        for name, vals in cols.items():
            arr = np.asarray(vals, dtype=float)
            arr.setflags(write=False)
            arrays[name] = arr
        for name in ("min_up", "min_down"):
            arr = np.asarray([getattr(u, name) for u in self.units], dtype=int)
            arr.setflags(write=False)
            arrays[name] = arr
        object.__setattr__(self, "_arrays", arrays)

    def __getattr__(self, name):
        # vectorised unit columns, e.g. grid.p_max
        arrays = self.__dict__.get("_arrays")
        if arrays is not None and name in arrays:
            return arrays[name]
        raise AttributeError(name)

    @property
    def n_units(self) -> int:
        return len(self.units)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def has_lines(self) -> bool:
        return bool(self.lines)

    @property
    def flow_min(self) -> np.ndarray:
        return np.array([ln.flow_min for ln in self.lines], dtype=float)

    @property
    def flow_max(self) -> np.ndarray:
        return np.array([ln.flow_max for ln in self.lines], dtype=float)

    def init_status(self) -> np.ndarray:
        return np.array([u.init_status for u in self.units], dtype=int)

    def init_power(self) -> np.ndarray:
        return np.array([u.p0 for u in self.units], dtype=float)

    def init_duration(self) -> np.ndarray:
        return np.array([u.init_duration for u in self.units], dtype=int)

    def line_flows(self, p: np.ndarray, demand: np.ndarray) -> np.ndarray:
        """Flows (MW) for unit outputs ``p`` and per-bus ``demand``."""
        return p @ self.ptdf_unit - demand @ self.ptdf_load

    def reserve_requirement(self, total_demand: float) -> float:
        return self.reserve_fraction * total_demand

    def replace(self, **changes) -> "GridSpec":
        """Copy with some fields changed; PTDFs are recomputed when lines or units change."""
        kw = dict(
            n_buses=self.n_buses,
            units=self.units,
            lines=self.lines,
            slack_bus=self.slack_bus,
            reserve_fraction=self.reserve_fraction,
        )
        kw.update(changes)
        return GridSpec(**kw)


@dataclass(frozen=True, eq=False)
class LoadScenario:
    """Per-bus demand over ``horizon`` periods (row ``t`` is period ``t+1``)."""

    demand: np.ndarray
    forecast_window: int = 9
    periods_per_day: int = 24

    def __post_init__(self):
        d = np.array(self.demand, dtype=float)
        if d.ndim != 2 or d.shape[0] < 1:
            raise StructuralError("demand must be a non-empty T x M matrix")
        if np.any(d < 0):
            raise StructuralError("demand must be non-negative")
        if self.forecast_window < 1:
            raise StructuralError("forecast_window must be >= 1")
        d.setflags(write=False)
        object.__setattr__(self, "demand", d)
        tot = d.sum(axis=1)
        tot.setflags(write=False)
        object.__setattr__(self, "total", tot)

    @property
    def horizon(self) -> int:
        return self.demand.shape[0]

    @property
    def n_buses(self) -> int:
        return self.demand.shape[1]

    @property
    def n_days(self) -> int:
        return self.horizon // self.periods_per_day

    def day(self, d: int) -> "LoadScenario":
        lo = d * self.periods_per_day
        return self.window(lo, lo + self.periods_per_day)

    def window(self, start: int, stop: int) -> "LoadScenario":
        """Rows ``start:stop`` (0-based, i.e. periods start+1..stop)."""
        if not 0 <= start < stop <= self.horizon:
            raise StructuralError(f"window {start}:{stop} outside horizon {self.horizon}")
        return LoadScenario(self.demand[start:stop], self.forecast_window, self.periods_per_day)

    def scaled(self, factor: float) -> "LoadScenario":
        return LoadScenario(self.demand * factor, self.forecast_window, self.periods_per_day)


@dataclass(frozen=True, eq=False)
class Schedule:
    """Commitment ``v`` and dispatch ``p``, both T x N."""

    v: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=int)
        p = np.array(self.p, dtype=float)
        if v.ndim != 2 or v.shape != p.shape:
            raise StructuralError(f"v {v.shape} and p {p.shape} must be equal T x N matrices")
        if np.any((v != 0) & (v != 1)):
            raise StructuralError("v must be binary")
        v.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "p", p)

    @property
    def horizon(self) -> int:
        return self.v.shape[0]

    @property
    def n_units(self) -> int:
        return self.v.shape[1]


@dataclass(frozen=True)
class Violation:
    kind: str
    period: int  # 1-based operating period
    index: int  # unit or line index, -1 for system-wide constraints
    magnitude: float


@dataclass
class ViolationReport:
    entries: list[Violation] = field(default_factory=list)

    def add(self, kind: str, period: int, index: int, magnitude: float) -> None:
        self.entries.append(Violation(kind, period, index, float(magnitude)))

    def __bool__(self) -> bool:
        # truthy when something is violated
        return bool(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def feasible(self) -> bool:
        return not self.entries

    def kinds(self) -> set[str]:
        return {e.kind for e in self.entries}


# ---------------------------------------------------------------------------
# cost kernels


def production_cost(unit: UnitSpec, v: int, p: float, tol: float = TAU_FEAS) -> float:
    """Quadratic fuel cost ``a v + b p + c p^2`` of one unit in one period."""
    if v == 0:
        if abs(p) > tol:
            raise InvalidDispatchError(f"unit {unit.id} is off but p={p}")
        return 0.0
    if v != 1:
        raise InvalidDispatchError(f"status must be 0 or 1, got {v}")
    if p < unit.p_min - tol or p > unit.p_max + tol:
        raise InvalidDispatchError(
            f"unit {unit.id}: p={p} outside [{unit.p_min}, {unit.p_max}]"
        )
    return unit.a + unit.b * p + unit.c * p * p


def startup_cost_from_counter(unit: UnitSpec, u_prev: int, v_prev: int, v_next: int) -> float:
    if v_next > v_prev:
        return unit.startup_stairs[min(unit.n_stairs, int(u_prev)) - 1]
    return 0.0


def shutdown_cost(unit: UnitSpec, v_prev: int, v_next: int) -> float:
    return unit.shutdown_cost * max(0, v_prev - v_next)


def average_fuel_price(unit: UnitSpec) -> float:
    """Full-load cost per MW, the priority index of a unit."""
    if unit.p_max <= 0:
        raise InvalidUnitError(f"unit {unit.id}: p_max must be > 0")
    pm = unit.p_max
    return (unit.a + unit.b * pm + unit.c * pm * pm) / pm


def priorities(grid: GridSpec) -> np.ndarray:
    return np.array([average_fuel_price(u) for u in grid.units])


def update_counter(u_prev: int, v_prev: int, v_next: int) -> int:
    return u_prev + 1 if v_next == v_prev else 1


def update_counters(u: np.ndarray, v_prev: np.ndarray, v_next: np.ndarray) -> np.ndarray:
    return np.where(v_next == v_prev, u + 1, 1)


def startup_costs(grid: GridSpec, u: np.ndarray, v_prev: np.ndarray, v_next: np.ndarray) -> np.ndarray:
    out = np.zeros(grid.n_units)
    for i in np.flatnonzero(v_next > v_prev):
        out[i] = startup_cost_from_counter(grid.units[i], u[i], 0, 1)
    return out


def shutdown_costs(grid: GridSpec, v_prev: np.ndarray, v_next: np.ndarray) -> np.ndarray:
    return grid.shutdown_cost * np.maximum(0, v_prev - v_next)


def production_costs(grid: GridSpec, v: np.ndarray, p: np.ndarray) -> np.ndarray:
    return v * grid.a + grid.b * p + grid.c * p * p


# ---------------------------------------------------------------------------
# network


def bus_ptdf(n_buses: int, lines: Sequence[Line], slack_bus: int) -> np.ndarray:
    """L x M matrix of line-flow sensitivities to a unit injection at each bus
    withdrawn at the slack bus (DC power flow)."""
    L = len(lines)
    if L == 0:
        return np.zeros((0, n_buses))
    frm = np.array([ln.from_bus for ln in lines])
    to = np.array([ln.to_bus for ln in lines])
    b = 1.0 / np.array([ln.reactance for ln in lines])

    adj = np.zeros((n_buses, n_buses))
    adj[frm, to] = 1
    adj[to, frm] = 1
    n_comp, _ = connected_components(adj, directed=False)
    if n_comp > 1:
        raise IslandingError(f"network splits into {n_comp} islands")

    # branch-bus incidence and susceptance matrices
    A = np.zeros((L, n_buses))
    A[np.arange(L), frm] = 1.0
    A[np.arange(L), to] = -1.0
    Bf = b[:, None] * A
    Bbus = A.T @ Bf
    keep = np.array([j for j in range(n_buses) if j != slack_bus], dtype=int)
    ptdf = np.zeros((L, n_buses))
    if keep.size:
        ptdf[:, keep] = np.linalg.solve(Bbus[np.ix_(keep, keep)], Bf[:, keep].T).T
    return ptdf


def compute_ptdf(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Unit (N x L) and load (M x L) PTDF matrices of ``grid``."""
    phi = bus_ptdf(grid.n_buses, grid.lines, grid.slack_bus)
    unit_buses = np.array([u.bus for u in grid.units], dtype=int)
    gp = phi[:, unit_buses].T.copy() if len(unit_buses) else np.zeros((0, grid.n_lines))
    gd = phi.T.copy()
    return gp, gd


def dc_flows_direct(n_buses: int, lines: Sequence[Line], slack_bus: int, injection: np.ndarray) -> np.ndarray:
    """Line flows from solving the reduced susceptance system for a balanced injection."""
    L = len(lines)
    B = np.zeros((n_buses, n_buses))
    for ln in lines:
        y = 1.0 / ln.reactance
        B[ln.from_bus, ln.from_bus] += y
        B[ln.to_bus, ln.to_bus] += y
        B[ln.from_bus, ln.to_bus] -= y
        B[ln.to_bus, ln.from_bus] -= y
    keep = [j for j in range(n_buses) if j != slack_bus]
    theta = np.zeros(n_buses)
    theta[keep] = np.linalg.solve(B[np.ix_(keep, keep)], np.asarray(injection, float)[keep])
    return np.array(
        [(theta[ln.from_bus] - theta[ln.to_bus]) / ln.reactance for ln in lines]
    ).reshape(L)


# ---------------------------------------------------------------------------
# ramp-limited output bounds, shared by dispatch and validation


def upper_output_bound(grid: GridSpec, v: np.ndarray, v_prev: np.ndarray,
                       p_prev: np.ndarray, v_next: Optional[np.ndarray] = None) -> np.ndarray:
    """Maximum available output given neighbouring periods.

    Combines capacity, the ramp-up / startup-ramp limit and the
    shutdown-ramp limit on the next period. ``v_next=None`` means the next
    status is unknown and taken equal to ``v`` (non-binding).
    """
    pmax = grid.p_max
    hi = np.minimum(
        pmax * v,
        p_prev + grid.ramp_up * v_prev + pmax * (1 - v) + grid.startup_ramp * (v - v_prev),
    )
    if v_next is not None:
        hi = np.minimum(hi, pmax * v_next + grid.shutdown_ramp * (v - v_next))
    return np.maximum(hi, 0.0)


def lower_output_bound(grid: GridSpec, v: np.ndarray, v_prev: np.ndarray, p_prev: np.ndarray) -> np.ndarray:
    """Minimum output from the generation floor and the ramp-down limit."""
    ramp = (p_prev - grid.ramp_down * v - grid.shutdown_ramp * (v_prev - v)
            - grid.p_max * (1 - v_prev))
    return np.maximum(grid.p_min * v, ramp)


# ---------------------------------------------------------------------------
# validation and objective evaluation


def _check_dims(grid: GridSpec, loads: LoadScenario, sched: Schedule) -> None:
    if sched.n_units != grid.n_units:
        raise StructuralError(f"schedule has {sched.n_units} units, grid has {grid.n_units}")
    if sched.horizon != loads.horizon:
        raise StructuralError(f"schedule has {sched.horizon} periods, loads have {loads.horizon}")
    if loads.n_buses != grid.n_buses:
        raise StructuralError(f"loads have {loads.n_buses} buses, grid has {grid.n_buses}")


def validate_schedule(grid: GridSpec, loads: LoadScenario, sched: Schedule,
                      tol: float = TAU_FEAS, v0=None, p0=None, u0=None) -> ViolationReport:
    """Check every constraint of the UC formulation for a given schedule.

    The initial condition defaults to the units' ``init_*`` fields; pass
    ``v0``/``p0``/``u0`` to validate a window that starts mid-stream.
    """
    _check_dims(grid, loads, sched)
    rep = ViolationReport()
    T, N = sched.v.shape
    v_prev = grid.init_status() if v0 is None else np.asarray(v0, dtype=int)
    p_prev = grid.init_power() if p0 is None else np.asarray(p0, dtype=float)
    u = grid.init_duration() if u0 is None else np.asarray(u0, dtype=int)
    pmax, pmin = grid.p_max, grid.p_min
    fmin, fmax = grid.flow_min, grid.flow_max

    for t in range(T):
        per = t + 1
        v, p = sched.v[t], sched.p[t]
        v_next = sched.v[t + 1] if t + 1 < T else v
        d_bus = loads.demand[t]
        D = d_bus.sum()

        mismatch = p.sum() - D
        if abs(mismatch) > tol:
            rep.add("balance", per, -1, abs(mismatch))

        # generation box
        lo = pmin * v
        for i in range(N):
            if p[i] < lo[i] - tol:
                rep.add("gen_limits", per, i, lo[i] - p[i])
            elif p[i] > pmax[i] * v[i] + tol:
                rep.add("gen_limits", per, i, p[i] - pmax[i] * v[i])

        # ramp up incl. startup ramp
        ru = p_prev + grid.ramp_up * v_prev + pmax * (1 - v) + grid.startup_ramp * (v - v_prev)
        # shutdown ramp against the next period
        sd = pmax * v_next + grid.shutdown_ramp * (v - v_next)
        # ramp down incl. shutdown ramp
        rd = p + grid.ramp_down * v + grid.shutdown_ramp * (v_prev - v) + pmax * (1 - v_prev)
        for i in range(N):
            if p[i] > ru[i] + tol:
                rep.add("ramp_up", per, i, p[i] - ru[i])
            if p[i] > sd[i] + tol:
                rep.add("ramp_down", per, i, p[i] - sd[i])
            if p_prev[i] > rd[i] + tol:
                rep.add("ramp_down", per, i, p_prev[i] - rd[i])

        p_bar = upper_output_bound(grid, v, v_prev, p_prev, v_next)
        short = D + grid.reserve_requirement(D) - p_bar.sum()
        if short > tol:
            rep.add("reserve", per, -1, short)

        # minimum up/down via run-length counters
        for i in range(N):
            if v[i] != v_prev[i]:
                if v_prev[i] == 1 and u[i] < grid.min_up[i]:
                    rep.add("min_up", per, i, grid.min_up[i] - u[i])
                elif v_prev[i] == 0 and u[i] < grid.min_down[i]:
                    rep.add("min_down", per, i, grid.min_down[i] - u[i])

        if grid.has_lines:
            flows = grid.line_flows(p, d_bus)
            for l in range(grid.n_lines):
                if flows[l] > fmax[l] + tol:
                    rep.add("line_flow", per, l, flows[l] - fmax[l])
                elif flows[l] < fmin[l] - tol:
                    rep.add("line_flow", per, l, fmin[l] - flows[l])

        u = update_counters(u, v_prev, v)
        v_prev, p_prev = v, p
    return rep


def schedule_cost_breakdown(grid: GridSpec, sched: Schedule, v0=None, u0=None) -> np.ndarray:
    """T x 3 array of (production, startup, shutdown) cost per period."""
    if sched.n_units != grid.n_units:
        raise StructuralError(f"schedule has {sched.n_units} units, grid has {grid.n_units}")
    v_prev = grid.init_status() if v0 is None else np.asarray(v0, dtype=int)
    u = grid.init_duration() if u0 is None else np.asarray(u0, dtype=int)
    out = np.zeros((sched.horizon, 3))
    for t in range(sched.horizon):
        v, p = sched.v[t], sched.p[t]
        out[t, 0] = production_costs(grid, v, p).sum()
        out[t, 1] = startup_costs(grid, u, v_prev, v).sum()
        out[t, 2] = shutdown_costs(grid, v_prev, v).sum()
        u = update_counters(u, v_prev, v)
        v_prev = v
    return out


def schedule_cost(grid: GridSpec, sched: Schedule, v0=None, u0=None) -> float:
    """Total operating cost of a schedule (production + startup + shutdown)."""
    return float(schedule_cost_breakdown(grid, sched, v0, u0).sum())


def run_length(seq: Sequence[int], init_status: int, init_duration: int) -> int:
    """Length of the trailing constant block of ``seq`` including history."""
    n = 0
    for x in reversed(seq):
        if x != seq[-1]:
            return n
        n += 1
    if not seq:
        return init_duration
    return n + (init_duration if seq[-1] == init_status else 0)
