"""Exact unit commitment at desk scale.

Every commitment matrix is priced by chaining single-period economic
dispatches: period ``t`` is dispatched given period ``t-1``'s output, exactly
as the MDP environment does. Two solvers share that pricing:

* :func:`enumerate_uc` walks every feasible commitment matrix (test oracle);
* :func:`solve_uc_bnb` is a depth-first branch and bound over the same tree
  with a relaxation bound, incumbent pruning and state dominance.

:func:`solve_toggle_problem` answers the single-period "toggle exactly z
units" problems used to widen the candidate action set.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dispatch import DispatchProblem, dispatch_within, equal_marginal, solve_ed
from .model import (
    TAU_FEAS,
    GridSpec,
    Schedule,
    StructuralError,
    priorities,
    startup_cost_from_counter,
    update_counters,
)

ENUM_CAP = 20  # N * H binaries for the exhaustive oracle
DP_BOUND_MAX_UNITS = 10
TOGGLE_EXHAUSTIVE_MAX = 100_000


@dataclass(frozen=True, eq=False)
class ChainState:
    """Operating point at the end of a period.

    ``load`` is the total demand served in that period (``None`` for the
    initial condition) and ``p_bar`` the available output computed with the
    next status unknown; both feed the retroactive shutdown-ramp reserve check.
    """

    v: np.ndarray
    p: np.ndarray
    u: np.ndarray
    p_bar: np.ndarray
    load: Optional[float] = None

    @classmethod
    def initial(cls, grid: GridSpec) -> "ChainState":
        v = grid.init_status()
        p = grid.init_power()
        return cls(v, p, grid.init_duration(), p.copy(), None)


@dataclass(frozen=True, eq=False)
class StepResult:
    state: ChainState
    production: float
    startup: float
    shutdown: float
    kkt_residual: float

    @property
    def cost(self) -> float:
        return self.production + self.startup + self.shutdown


def lock_ok(grid: GridSpec, prev: ChainState, v_new: np.ndarray) -> bool:
    """Minimum up/down time and shutdown-ramp admissibility of a status change."""
    off = (prev.v == 1) & (v_new == 0)
    on = (prev.v == 0) & (v_new == 1)
    if np.any(off & (prev.u < grid.min_up)):
        return False
    if np.any(on & (prev.u < grid.min_down)):
        return False
    if np.any(off & (prev.p > grid.shutdown_ramp + TAU_FEAS)):
        return False
    return True


def retro_reserve_ok(grid: GridSpec, prev: ChainState, v_new: np.ndarray) -> bool:
    """Reserve of the previous period once its shutdown-ramp caps are known."""
    if prev.load is None:
        return True
    off = (prev.v == 1) & (v_new == 0)
    if not off.any():
        return True
    p_bar = np.where(off, np.minimum(prev.p_bar, grid.shutdown_ramp), prev.p_bar)
    need = prev.load + grid.reserve_requirement(prev.load)
    return bool(p_bar.sum() >= need - TAU_FEAS)


def step_period(grid: GridSpec, prev: ChainState, v_new, demand_bus,
                check_locks: bool = True) -> Optional[StepResult]:
    """Advance the chain by one period with commitment ``v_new``.

    Returns ``None`` when the move is infeasible (locks, ramps, balance,
    reserve, line limits).
    """
    v_new = np.asarray(v_new, dtype=int)
    if check_locks and not lock_ok(grid, prev, v_new):
        return None
    if not retro_reserve_ok(grid, prev, v_new):
        return None
    demand_bus = np.asarray(demand_bus, dtype=float)
    sol = solve_ed(DispatchProblem(grid, demand_bus, v_new, prev.p, prev.v))
    if not sol.feasible:
        return None
    startup = 0.0
    for i in np.flatnonzero(v_new > prev.v):
        startup += startup_cost_from_counter(grid.units[i], prev.u[i], 0, 1)
    shutdown = float(np.sum(grid.shutdown_cost * np.maximum(0, prev.v - v_new)))
    state = ChainState(v_new, sol.p, update_counters(prev.u, prev.v, v_new), sol.p_bar,
                       float(demand_bus.sum()))
    return StepResult(state, sol.production_cost, startup, shutdown, sol.kkt_residual)


@dataclass(frozen=True, eq=False)
class UcSubproblem:
    """A UC instance over ``demand.shape[0]`` periods from a given start state.

    ``commit_cost`` (H x N) adds a linear term on the commitment variables,
    which is how the priority-augmented objective of the lookahead problem is
    expressed. ``fixed`` (H x N) holds -1 for free entries, else the forced
    status. ``excluded_units`` are forced off throughout.
    """

    grid: GridSpec
    demand: np.ndarray  # H x M
    start: Optional[ChainState] = None
    commit_cost: Optional[np.ndarray] = None
    fixed: Optional[np.ndarray] = None
    toggle_count: Optional[int] = None
    excluded_units: frozenset = frozenset()

    def __post_init__(self):
        d = np.atleast_2d(np.asarray(self.demand, dtype=float))
        if d.shape[1] != self.grid.n_buses:
            raise StructuralError(f"demand has {d.shape[1]} buses, grid has {self.grid.n_buses}")
        object.__setattr__(self, "demand", d)
        if self.start is None:
            object.__setattr__(self, "start", ChainState.initial(self.grid))
        H, N = d.shape[0], self.grid.n_units
        for name in ("commit_cost", "fixed"):
            arr = getattr(self, name)
            if arr is not None and np.shape(arr) != (H, N):
                raise StructuralError(f"{name} must be {H} x {N}")
        if self.excluded_units:
            # units out of service are held off in every period
            fx = np.full((H, N), -1) if self.fixed is None else np.array(self.fixed, dtype=int)
            fx[:, sorted(self.excluded_units)] = 0
            object.__setattr__(self, "fixed", fx)

    @property
    def horizon(self) -> int:
        return self.demand.shape[0]

    @property
    def n_units(self) -> int:
        return self.grid.n_units

    def commit_row(self, t: int) -> np.ndarray:
        if self.commit_cost is None:
            return np.zeros(self.n_units)
        return np.asarray(self.commit_cost[t], dtype=float)

    def fixed_row(self, t: int) -> np.ndarray:
        if self.fixed is None:
            return np.full(self.n_units, -1)
        return np.asarray(self.fixed[t], dtype=int)


def priority_commit_cost(grid: GridSpec, horizon: int, omega: float) -> Optional[np.ndarray]:
    """Linear commitment cost of the switching term ``omega * sum (v(k+1)-v(k)) rho``.

    Summed over the lookahead window with the status after the window held
    at its last value, the term telescopes to ``omega * rho . (v(H) - v(1))``.
    """
    if omega == 0 or horizon < 2:
        return None
    rho = priorities(grid)
    cc = np.zeros((horizon, grid.n_units))
    cc[0] -= omega * rho
    cc[-1] += omega * rho
    return cc


@dataclass(frozen=True)
class SolveBudget:
    wall_time: float = math.inf  # seconds
    gap: float = 0.0  # relative optimality gap target
    nodes: float = math.inf

    def __post_init__(self):
        if math.isinf(self.wall_time) and math.isinf(self.nodes) and self.gap <= 0:
            # gap 0 with no other limit is a legitimate "solve to optimality" request
            pass


@dataclass(frozen=True, eq=False)
class UcResult:
    status: str  # optimal, feasible, infeasible, no_solution
    schedule: Optional[Schedule]
    cost: float  # operating cost of the schedule
    objective: float  # cost plus commitment-cost terms
    bound: float  # lower bound on the objective
    gap: float
    proved_optimal: bool
    nodes: int = 0
    breakdown: Optional[np.ndarray] = None  # H x 3 (production, startup, shutdown)
    final_state: Optional[ChainState] = None

    @property
    def found(self) -> bool:
        return self.schedule is not None


class InfeasibleError(Exception):
    pass


def _commit_cost_of(sub: UcSubproblem, t: int, v: np.ndarray) -> float:
    if sub.commit_cost is None:
        return 0.0
    return float(np.dot(sub.commit_cost[t], v))


def _candidate_vectors(sub: UcSubproblem, t: int, prev: ChainState, order):
    """Commitment vectors for period ``t`` consistent with fixings and locks.

    Bits are assigned unit by unit in ``order``; a prefix is cut as soon as a
    unit's status change is locked.
    """
    g = sub.grid
    N = g.n_units
    fixed = sub.fixed_row(t)
    allowed = []
    for i in range(N):
        opts = []
        for val in (0, 1):
            if fixed[i] >= 0 and fixed[i] != val:
                continue
            if val != prev.v[i]:
                if prev.v[i] == 1 and (prev.u[i] < g.min_up[i]
                                       or prev.p[i] > g.shutdown_ramp[i] + TAU_FEAS):
                    continue
                if prev.v[i] == 0 and prev.u[i] < g.min_down[i]:
                    continue
            opts.append(val)
        allowed.append(opts)
    out = []
    v = np.zeros(N, dtype=int)

    def rec(k):
        if k == len(order):
            out.append(v.copy())
            return
        i = order[k]
        for val in allowed[i]:
            v[i] = val
            rec(k + 1)
        v[i] = 0

    if all(allowed[i] for i in range(N)):
        rec(0)
    return out


# ---------------------------------------------------------------------------
# exhaustive oracle


def enumerate_uc(sub: UcSubproblem) -> UcResult:
    """Globally optimal schedule by walking every feasible commitment matrix.

    Ties are broken towards the lexicographically smallest flattened ``v``.
    """
    g = sub.grid
    H, N = sub.horizon, g.n_units
    if N * H > ENUM_CAP:
        raise StructuralError(f"enumeration refused: {N * H} binaries > cap {ENUM_CAP}")
    order = list(range(N))
    best = {"obj": math.inf, "path": None}
    path: list[StepResult] = []

    def rec(t, prev, obj):
        if t == H:
            if obj < best["obj"]:
                best["obj"] = obj
                best["path"] = list(path)
            return
        for v in _candidate_vectors(sub, t, prev, order):
            res = step_period(g, prev, v, sub.demand[t], check_locks=False)
            if res is None:
                continue
            path.append(res)
            rec(t + 1, res.state, obj + res.cost + _commit_cost_of(sub, t, v))
            path.pop()

    rec(0, sub.start, 0.0)
    if best["path"] is None:
        return UcResult("infeasible", None, math.inf, math.inf, math.inf, math.inf, False)
    return _result_from_path(best["path"], best["obj"], best["obj"], "optimal", True, 0)


def _result_from_path(path, objective, bound, status, proved, nodes) -> UcResult:
    v = np.array([r.state.v for r in path])
    p = np.array([r.state.p for r in path])
    br = np.array([[r.production, r.startup, r.shutdown] for r in path])
    cost = float(br.sum())
    gap = 0.0 if proved else _rel_gap(objective, bound)
    return UcResult(status, Schedule(v, p), cost, float(objective), float(bound), gap, proved,
                    nodes, br, path[-1].state)


def _rel_gap(incumbent, bound):
    if not math.isfinite(incumbent):
        return math.inf
    if not math.isfinite(bound):
        return math.inf
    denom = max(abs(incumbent), 1e-9)
    return max(0.0, (incumbent - bound) / denom)


# ---------------------------------------------------------------------------
# bounds


def _bit_matrix(n: int) -> np.ndarray:
    """All 2^n binary vectors, row k is the binary expansion of k (unit 0 = MSB)."""
    k = np.arange(2 ** n)
    return ((k[:, None] >> np.arange(n - 1, -1, -1)[None, :]) & 1).astype(int)


def _vec_index(v) -> int:
    idx = 0
    for x in v:
        idx = (idx << 1) | int(x)
    return idx


def relaxed_period_cost(grid: GridSpec, demand_bus, v: np.ndarray,
                        commit_row: Optional[np.ndarray] = None) -> float:
    """Ramp-free dispatch cost of commitment ``v`` (inf if it cannot serve demand and reserve)."""
    D = float(np.sum(demand_bus))
    if np.dot(grid.p_max, v) < D + grid.reserve_requirement(D) - TAU_FEAS:
        return math.inf
    sol = dispatch_within(grid, demand_bus, v, grid.p_min * v, grid.p_max * v)
    if not sol.optimal:
        return math.inf
    extra = 0.0 if commit_row is None else float(np.dot(commit_row, v))
    return sol.production_cost + extra


def continuous_period_bound(grid: GridSpec, demand_bus, commit_row=None, fixed_row=None) -> float:
    """Continuous relaxation of one period with ``v`` in [0, 1].

    The no-load and commitment costs of a free unit are spread over its output
    (``v = p / p_max``), which is their convex envelope; ramps, minimum output
    and reserve are dropped. The result never exceeds the period's true cost.
    """
    N = grid.n_units
    D = float(np.sum(demand_bus))
    k = np.zeros(N) if commit_row is None else np.asarray(commit_row, float)
    fx = np.full(N, -1) if fixed_row is None else np.asarray(fixed_row, int)
    b = grid.b.copy()
    lo = np.zeros(N)
    hi = grid.p_max.copy()
    const = 0.0
    for i in range(N):
        fixed_cost = grid.a[i] + k[i]
        if fx[i] == 0:
            hi[i] = 0.0
        elif fx[i] == 1:
            const += fixed_cost
            lo[i] = grid.p_min[i]
        elif fixed_cost < 0:
            const += fixed_cost
        else:
            b[i] += fixed_cost / grid.p_max[i] if grid.p_max[i] > 0 else 0.0
    res = equal_marginal(b, grid.c, lo, hi, D)
    if res is None:
        return math.inf
    x, _ = res
    return const + float(np.sum(b * x + grid.c * x * x))


class _CommitmentBound:
    """Lower bound on the cost-to-go as a function of the current commitment.

    Backward dynamic programme over commitment vectors where each period costs
    its ramp-free dispatch and each transition its shutdown cost plus the
    cheapest startup stair; minimum up/down times and ramps are ignored, so
    the value never exceeds the cost of any feasible continuation.
    """

    def __init__(self, sub: UcSubproblem, cache: Optional[dict] = None):
        g = sub.grid
        self.sub = sub
        H, N = sub.horizon, g.n_units
        self.use_dp = N <= DP_BOUND_MAX_UNITS
        if not self.use_dp:
            per = [continuous_period_bound(g, sub.demand[t], sub.commit_row(t), sub.fixed_row(t))
                   for t in range(H)]
            self.tail = np.concatenate([np.cumsum(per[::-1])[::-1], [0.0]])
            return
        V = _bit_matrix(N)
        self.V = V
        su0 = np.array([u.startup_stairs[0] for u in g.units])
        # trans[v, w]: cheapest transition cost from v to w
        self.trans = (V * g.shutdown_cost) @ (1 - V).T + ((1 - V) * su0) @ V.T
        rel = np.empty((H, len(V)))
        for t in range(H):
            key = None
            if cache is not None:
                key = (sub.demand[t].tobytes(), sub.commit_row(t).tobytes(),
                       sub.fixed_row(t).tobytes())
                if key in cache:
                    rel[t] = cache[key]
                    continue
            fixed = sub.fixed_row(t)
            row = np.empty(len(V))
            cr = sub.commit_row(t)
            for k, w in enumerate(V):
                if np.any((fixed >= 0) & (fixed != w)):
                    row[k] = math.inf
                else:
                    row[k] = relaxed_period_cost(g, sub.demand[t], w, cr)
            rel[t] = row
            if cache is not None:
                cache[key] = row
        self.rel = rel
        # after[t, v]: bound on periods t+1..H-1 given v at period t
        after = np.zeros((H, len(V)))
        for t in range(H - 2, -1, -1):
            nxt = rel[t + 1] + after[t + 1]
            after[t] = np.min(self.trans + nxt[None, :], axis=1)
        self.after = after

    def root(self) -> float:
        if not self.use_dp:
            return float(self.tail[0])
        v0 = _vec_index(self.sub.start.v)
        return float(np.min(self.trans[v0] + self.rel[0] + self.after[0]))

    def child(self, t: int, v_prev_idx: int, v_idx: int) -> float:
        """Bound on periods t..H-1 when period t takes commitment ``v_idx``."""
        if not self.use_dp:
            return float(self.tail[t])
        return float(self.trans[v_prev_idx, v_idx] + self.rel[t, v_idx] + self.after[t, v_idx])

    def after_period(self, t: int, v_idx: int) -> float:
        if not self.use_dp:
            return float(self.tail[t + 1])
        return float(self.after[t, v_idx])


# ---------------------------------------------------------------------------
# branch and bound


class _Budget(Exception):
    pass


def solve_uc_bnb(sub: UcSubproblem, budget: SolveBudget = SolveBudget(),
                 bound_cache: Optional[dict] = None) -> UcResult:
    """Depth-first branch and bound over commitment binaries.

    Periods are branched in order; within a period units are assigned in
    descending priority-index order. Siblings are explored cheapest-bound
    first. A node is pruned when its bound reaches the incumbent (less the gap
    target) or when an identical operating state was already reached at no
    higher cost.
    """
    g = sub.grid
    H, N = sub.horizon, g.n_units
    rho = priorities(g) if N else np.zeros(0)
    order = sorted(range(N), key=lambda i: (-rho[i], i))
    bnd = _CommitmentBound(sub, bound_cache)
    root_bound = bnd.root()
    t0 = time.perf_counter()
    u_cap = np.array([max(u.min_up, u.min_down, u.n_stairs) for u in g.units], dtype=int)

    inc = {"obj": math.inf, "path": None}
    stats = {"nodes": 0, "pruned_floor": math.inf, "open_floor": math.inf}
    seen: dict = {}
    path: list[StepResult] = []

    if not math.isfinite(root_bound):
        return UcResult("infeasible", None, math.inf, math.inf, math.inf, math.inf, False)

    def cutoff():
        if not math.isfinite(inc["obj"]):
            return math.inf
        return inc["obj"] - budget.gap * abs(inc["obj"])

    def rec(t, prev, obj, prev_idx):
        if t == H:
            if obj < inc["obj"]:
                inc["obj"] = obj
                inc["path"] = list(path)
            return
        kids = []
        for v in _candidate_vectors(sub, t, prev, order):
            idx = _vec_index(v) if bnd.use_dp else 0
            lb = obj + bnd.child(t, prev_idx, idx)
            if math.isfinite(lb):
                kids.append((lb, tuple(v), idx, v))
        kids.sort(key=lambda k: (k[0], k[1]))
        for pos, (lb, _, idx, v) in enumerate(kids):
            if lb >= inc["obj"]:
                break
            if lb >= cutoff():
                stats["pruned_floor"] = min(stats["pruned_floor"], lb)
                break
            if stats["nodes"] >= budget.nodes or time.perf_counter() - t0 > budget.wall_time:
                stats["open_floor"] = min(stats["open_floor"], lb)
                raise _Budget
            stats["nodes"] += 1
            res = step_period(g, prev, v, sub.demand[t], check_locks=False)
            if res is None:
                continue
            new_obj = obj + res.cost + _commit_cost_of(sub, t, v)
            bound = new_obj + bnd.after_period(t, idx)
            if bound >= inc["obj"]:
                continue
            if bound >= cutoff():
                stats["pruned_floor"] = min(stats["pruned_floor"], bound)
                continue
            s = res.state
            key = (t, s.v.tobytes(), s.p.tobytes(), s.p_bar.tobytes(),
                   np.minimum(s.u, u_cap).tobytes())
            if seen.get(key, math.inf) <= new_obj:
                continue
            seen[key] = new_obj
            path.append(res)
            try:
                rec(t + 1, s, new_obj, idx)
            except _Budget:
                # remaining siblings stay open
                for lb2, *_ in kids[pos + 1:]:
                    stats["open_floor"] = min(stats["open_floor"], lb2)
                raise
            finally:
                path.pop()

    exhausted = False
    try:
        rec(0, sub.start, 0.0, _vec_index(sub.start.v) if bnd.use_dp else 0)
    except _Budget:
        exhausted = True

    nodes = stats["nodes"]
    floor = min(stats["open_floor"], stats["pruned_floor"])
    if inc["path"] is None:
        if exhausted:
            lb = root_bound if nodes == 0 else max(root_bound, floor)
            return UcResult("no_solution", None, math.inf, math.inf, lb, math.inf, False, nodes)
        return UcResult("infeasible", None, math.inf, math.inf, math.inf, math.inf, False, nodes)

    obj = inc["obj"]
    proved = not exhausted and stats["pruned_floor"] >= obj
    lb = obj if proved else min(obj, max(root_bound, floor))
    status = "optimal" if proved else "feasible"
    return _result_from_path(inc["path"], obj, lb, status, proved, nodes)


def root_relaxation_bound(sub: UcSubproblem, bound_cache: Optional[dict] = None) -> float:
    """Lower bound on the subproblem objective before any branching."""
    return _CommitmentBound(sub, bound_cache).root()


# ---------------------------------------------------------------------------
# single-period toggle problems


def _ordered_subsets(weights: np.ndarray, z: int):
    """Lazily yield z-subsets of ``range(len(weights))`` by ascending weight sum.

    Classic best-first enumeration over sorted weights; ties come out in
    heap order.
    """
    n = len(weights)
    if z == 0:
        yield ()
        return
    if z > n:
        return
    order = np.argsort(weights, kind="stable")
    w = weights[order]
    start = tuple(range(z))
    heap = [(float(w[list(start)].sum()), start)]
    seen = {start}
    while heap:
        s, comb = heapq.heappop(heap)
        yield tuple(sorted(int(order[k]) for k in comb))
        for j in range(z):
            nxt_pos = comb[j] + 1
            if nxt_pos >= n or (j + 1 < z and nxt_pos == comb[j + 1]):
                continue
            new = comb[:j] + (nxt_pos,) + comb[j + 1:]
            if new not in seen:
                seen.add(new)
                heapq.heappush(heap, (s - w[comb[j]] + w[nxt_pos], new))


def solve_toggle_problem(grid: GridSpec, prev: ChainState, demand_bus, z: int, K: int,
                         excluded=frozenset(), rho: Optional[np.ndarray] = None):
    """The ``K`` cheapest feasible next commitments that change exactly ``z`` units.

    The objective is ``sum (v_next - v) * rho``; units in ``excluded`` keep
    their status. Feasibility means the period can be dispatched with its
    reserve met. Results come sorted by objective then lexicographically.
    """
    if rho is None:
        rho = priorities(grid)
    v = np.asarray(prev.v, dtype=int)
    free = [i for i in range(grid.n_units) if i not in excluded]
    if z < 0 or z > len(free) or K <= 0:
        return []
    # objective contribution of toggling unit i
    delta = np.array([(1 - 2 * v[i]) * rho[i] for i in free])
    out = []
    n_comb = math.comb(len(free), z)
    if n_comb <= TOGGLE_EXHAUSTIVE_MAX:
        cands = []
        for comb in itertools.combinations(range(len(free)), z):
            vn = v.copy()
            for k in comb:
                vn[free[k]] = 1 - vn[free[k]]
            cands.append((float(delta[list(comb)].sum()) if comb else 0.0, tuple(vn), vn))
        cands.sort(key=lambda c: (c[0], c[1]))
        limit = None
    else:
        cands = []
        for comb in _ordered_subsets(delta, z):
            vn = v.copy()
            for k in comb:
                vn[free[k]] = 1 - vn[free[k]]
            cands.append((float(delta[list(comb)].sum()), tuple(vn), vn))
            if len(cands) >= 10 * K:
                break
        cands.sort(key=lambda c: (c[0], c[1]))
        limit = 10 * K
    for obj, _, vn in cands[:limit]:
        if step_period(grid, prev, vn, demand_bus) is not None:
            out.append((vn, obj))
            if len(out) == K:
                break
    return out
