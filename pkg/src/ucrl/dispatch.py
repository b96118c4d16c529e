"""Single-period economic dispatch.

The committed units share the demand at a common marginal price (an exact
breakpoint search on the piecewise-linear aggregate supply curve). When the
resulting flows break a line limit the full QP with PTDF rows is handed to
Clarabel's interior-point solver.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .model import (
    TAU_FEAS,
    GridSpec,
    lower_output_bound,
    upper_output_bound,
)

TAU_KKT = 1e-6


@dataclass(frozen=True, eq=False)
class DispatchProblem:
    grid: GridSpec
    period_demand: np.ndarray  # per bus, MW
    v: np.ndarray
    p_prev: np.ndarray
    v_prev: np.ndarray
    reserve_req: Optional[float] = None  # defaults to the grid's reserve policy
    v_next: Optional[np.ndarray] = None  # unknown next status -> non-binding

    @property
    def total_demand(self) -> float:
        return float(np.sum(self.period_demand))

    @property
    def reserve(self) -> float:
        if self.reserve_req is not None:
            return float(self.reserve_req)
        return self.grid.reserve_requirement(self.total_demand)


@dataclass(frozen=True, eq=False)
class DispatchSolution:
    status: str  # "optimal" or "infeasible"
    p: Optional[np.ndarray] = None
    p_bar: Optional[np.ndarray] = None
    production_cost: float = float("nan")
    kkt_residual: float = float("nan")
    price: float = float("nan")  # system marginal price, $/MWh
    reserve_ok: bool = False
    witness: Optional[str] = None  # constraint class that failed

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    @property
    def feasible(self) -> bool:
        """Dispatch exists and the spinning-reserve requirement holds."""
        return self.status == "optimal" and self.reserve_ok


def effective_bounds(problem: DispatchProblem) -> tuple[np.ndarray, np.ndarray]:
    """Per-unit output interval ``(lo, hi)`` after ramp and status limits.

    ``lo > hi`` for some unit means that unit cannot take status ``v`` from
    its previous operating point.
    """
    g = problem.grid
    v = np.asarray(problem.v)
    v_prev = np.asarray(problem.v_prev)
    p_prev = np.asarray(problem.p_prev, dtype=float)
    hi = upper_output_bound(g, v, v_prev, p_prev, problem.v_next)
    lo = lower_output_bound(g, v, v_prev, p_prev)
    return lo, hi


def equal_marginal(b, c, lo, hi, demand):
    """Minimise ``sum(b x + c x^2)`` subject to ``sum(x) = demand`` and box bounds.

    Returns ``(x, price)`` or ``None`` when ``demand`` is outside
    ``[sum(lo), sum(hi)]``. Units with ``c = 0`` jump from ``lo`` to ``hi`` at
    price ``b``; ties among them are filled in index order.
    """
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = len(b)
    s_lo, s_hi = lo.sum(), hi.sum()
    scale = max(1.0, abs(demand))
    if demand < s_lo - TAU_FEAS * 1e-3 * scale or demand > s_hi + TAU_FEAS * 1e-3 * scale:
        return None
    x = lo.copy()
    free = hi > lo
    if not free.any():
        return x, float("nan")
    if demand <= s_lo:
        return x, float(np.min(b[free] + 2 * c[free] * lo[free]))
    if demand >= s_hi:
        return hi.copy(), float(np.max(b[free] + 2 * c[free] * hi[free]))

    quad = free & (c > 0)
    lin = free & (c <= 0)
    lam_lo = np.where(quad, b + 2 * c * lo, b)
    lam_hi = np.where(quad, b + 2 * c * hi, b)
    knots = np.unique(np.concatenate([lam_lo[free], lam_hi[free]]))

    c2 = np.where(quad, 2 * c, 1.0)

    def supply(lam, right):
        xs = np.where(quad, np.clip((lam - b) / c2, lo, hi), lo)
        if right:
            xs = np.where(lin & (b <= lam), hi, xs)
        else:
            xs = np.where(lin & (b < lam), hi, xs)
        return xs

    prev_lam = None
    for lam in knots:
        left = supply(lam, right=False)
        right = supply(lam, right=True)
        s_right = right.sum()
        if s_right < demand:
            prev_lam = lam
            continue
        s_left = left.sum()
        if s_left <= demand:
            # price sits on this knot; linear units at this price absorb the rest
            x = left
            rest = demand - s_left
            for i in np.flatnonzero(lin & (b == lam)):
                take = min(rest, hi[i] - lo[i])
                x[i] = lo[i] + take
                rest -= take
                if rest <= 0:
                    break
            return x, float(lam)
        # strictly between the previous knot and this one: linear segment
        base = supply(prev_lam, right=True)
        interior = quad & (lam_lo <= prev_lam) & (lam_hi >= lam)
        slope = np.sum(1.0 / c2[interior])
        price = prev_lam + (demand - base.sum()) / slope
        x = np.where(quad, np.clip((price - b) / c2, lo, hi), base)
        return x, float(price)
    return hi.copy(), float(knots[-1])


def _kkt_box(b, c, lo, hi, x, price):
    if not np.isfinite(price):
        return 0.0
    g = b + 2 * c * x - price
    at_lo = x <= lo + 1e-9
    at_hi = x >= hi - 1e-9
    res = np.where(at_lo & at_hi, 0.0,
                   np.where(at_lo, np.maximum(0.0, -g),
                            np.where(at_hi, np.maximum(0.0, g), np.abs(g))))
    return float(res.max()) if len(res) else 0.0


def _solve_with_lines(g: GridSpec, d_bus, lo, hi):
    """Dense QP with line limits, solved by Clarabel."""
    import clarabel

    n = g.n_units
    base_flow = d_bus @ g.ptdf_load
    G = g.ptdf_unit.T  # L x N
    P = sp.csc_matrix(np.diag(2 * g.c))
    q = g.b.copy()
    A = sp.vstack([
        sp.csc_matrix(np.ones((1, n))),
        sp.csc_matrix(-np.eye(n)),
        sp.csc_matrix(np.eye(n)),
        sp.csc_matrix(G),
        sp.csc_matrix(-G),
    ]).tocsc()
    rhs = np.concatenate([[d_bus.sum()], -lo, hi, g.flow_max + base_flow, -(g.flow_min + base_flow)])
    cones = [clarabel.ZeroConeT(1), clarabel.NonnegativeConeT(2 * n + 2 * g.n_lines)]
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = 1e-10
    settings.tol_gap_rel = 1e-10
    settings.tol_feas = 1e-10
    solver = clarabel.DefaultSolver(P, q, A, rhs, cones, settings)
    sol = solver.solve()
    status = str(sol.status)
    if "Solved" not in status:
        return None
    x = np.clip(np.array(sol.x), lo, hi)
    z = np.array(sol.z)
    s = np.array(sol.s)
    stat = P @ x + q + A.T @ z
    comp = np.abs(s[1:] * z[1:]).max() if len(z) > 1 else 0.0
    kkt = max(float(np.abs(stat).max()), float(comp))
    return x, float(-z[0]), kkt


def solve_ed(problem: DispatchProblem, tol_kkt: float = TAU_KKT) -> DispatchSolution:
    """Cost-minimising dispatch of the committed units for one period."""
    lo, hi = effective_bounds(problem)
    return dispatch_within(problem.grid, problem.period_demand, problem.v, lo, hi,
                           problem.reserve_req)


def dispatch_within(grid: GridSpec, demand_bus, v, lo, hi, reserve_req=None) -> DispatchSolution:
    """Economic dispatch for explicit per-unit output bounds ``lo``/``hi``.

    ``hi`` doubles as the available output for the reserve check.
    """
    g = grid
    v = np.asarray(v)
    demand_bus = np.asarray(demand_bus, dtype=float)
    D = float(demand_bus.sum())
    reserve = g.reserve_requirement(D) if reserve_req is None else float(reserve_req)
    reserve_ok = bool(hi.sum() >= D + reserve - TAU_FEAS)
    if np.any(lo > hi + TAU_FEAS):
        return DispatchSolution("infeasible", p_bar=hi, reserve_ok=reserve_ok, witness="ramp")
    lo = np.minimum(lo, hi)
    res = equal_marginal(g.b, g.c, lo, hi, D)
    if res is None:
        return DispatchSolution("infeasible", p_bar=hi, reserve_ok=reserve_ok, witness="balance")
    x, price = res
    kkt = _kkt_box(g.b, g.c, lo, hi, x, price)
    if g.has_lines:
        flows = g.line_flows(x, demand_bus)
        if np.any(flows > g.flow_max + TAU_FEAS) or np.any(flows < g.flow_min - TAU_FEAS):
            out = _solve_with_lines(g, demand_bus, lo, hi)
            if out is None:
                return DispatchSolution("infeasible", p_bar=hi, reserve_ok=reserve_ok,
                                        witness="line_flow")
            x, price, kkt = out
    x = np.where(v == 1, x, 0.0)
    cost = float(np.sum(g.a * v + g.b * x + g.c * x * x))
    return DispatchSolution("optimal", p=x, p_bar=hi, production_cost=cost,
                            kkt_residual=kkt, price=price, reserve_ok=reserve_ok)


def dispatch(grid: GridSpec, demand_bus, v, v_prev, p_prev, v_next=None,
             reserve_req=None) -> DispatchSolution:
    """Shorthand for building a :class:`DispatchProblem` and solving it."""
    return solve_ed(DispatchProblem(grid, np.asarray(demand_bus, dtype=float), np.asarray(v),
                                    np.asarray(p_prev, dtype=float), np.asarray(v_prev),
                                    reserve_req, v_next))
