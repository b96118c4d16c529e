"""Reference and random instances, and the synthetic load generator."""

from __future__ import annotations

import numpy as np

from .model import GridSpec, Line, LoadScenario, UnitSpec

PERIODS_PER_DAY = 24


def five_unit_grid(reserve_fraction: float = 0.1) -> GridSpec:
    """The 5-unit, 3-bus desk system shipped as ``data/five_unit.json``."""
    rows = [
        # p_max p_min   a      b     c      stairs        CD   RU  RD  SU   SD  UT DT st dur bus
        (200, 80, 500.0, 12.0, 0.004, (900, 1800), 100, 80, 80, 100, 100, 5, 4, 1, 8, 0),
        (180, 70, 450.0, 13.0, 0.005, (800, 1600), 90, 70, 70, 90, 90, 4, 3, 1, 6, 0),
        (150, 40, 300.0, 17.0, 0.008, (400, 800), 50, 60, 60, 60, 60, 3, 2, 0, 3, 1),
        (120, 25, 200.0, 22.0, 0.012, (150, 300), 20, 60, 60, 50, 50, 2, 2, 0, 2, 2),
        (100, 20, 150.0, 27.0, 0.020, (100, 200), 10, 60, 60, 40, 40, 1, 1, 0, 1, 2),
    ]
    units = [
        UnitSpec(id=k, bus=r[15], p_max=r[0], p_min=r[1], a=r[2], b=r[3], c=r[4],
                 startup_stairs=r[5], shutdown_cost=r[6], ramp_up=r[7], ramp_down=r[8],
                 startup_ramp=r[9], shutdown_ramp=r[10], min_up=r[11], min_down=r[12],
                 init_status=r[13], init_duration=r[14])
        for k, r in enumerate(rows)
    ]
    lines = [Line(0, 1, 0.1, -250, 250), Line(0, 2, 0.1, -250, 250), Line(1, 2, 0.1, -250, 250)]
    return GridSpec(n_buses=3, units=units, lines=lines, slack_bus=0,
                    reserve_fraction=reserve_fraction)


FIVE_UNIT_BUS_SHARE = (0.2, 0.4, 0.4)


def daily_shape(periods: int = PERIODS_PER_DAY) -> np.ndarray:
    """Normalised double-peak daily load profile (max 1)."""
    h = np.arange(periods) * 24.0 / periods
    shape = (0.58
             + 0.22 * np.exp(-0.5 * ((h - 9.0) / 2.5) ** 2)
             + 0.42 * np.exp(-0.5 * ((h - 19.0) / 3.0) ** 2))
    return shape / shape.max()


def synthetic_loads(n_days: int, peak: float, bus_share, seed: int = 0,
                    noise: float = 0.03, forecast_window: int = 9) -> LoadScenario:
    """Seeded synthetic demand: daily double peak, day-level level shifts, noise.

    ``peak`` is the largest total demand over the whole series.
    """
    rng = np.random.default_rng(seed)
    shape = daily_shape()
    days = []
    for _ in range(n_days):
        level = 1.0 + 0.06 * rng.standard_normal()
        prof = shape * level * (1.0 + noise * rng.standard_normal(len(shape)))
        days.append(prof)
    total = np.concatenate(days)
    total = np.clip(total, 0.05, None)
    total *= peak / total.max()
    share = np.asarray(bus_share, dtype=float)
    share = share / share.sum()
    return LoadScenario(np.round(np.outer(total, share), 3), forecast_window, PERIODS_PER_DAY)


def random_grid(rng: np.random.Generator, n_units: int, n_buses: int = 1,
                with_lines: bool = False, reserve_fraction: float = 0.1) -> GridSpec:
    """Random but well-posed small fleet (used by the property and acceptance tests)."""
    units = []
    for i in range(n_units):
        pmax = float(rng.uniform(50, 200))
        pmin = float(np.round(pmax * rng.uniform(0.2, 0.5), 2))
        su = float(np.round(rng.uniform(pmin, pmax), 2))
        sd = float(np.round(rng.uniform(pmin, pmax), 2))
        hot = float(np.round(rng.uniform(50, 600), 1))
        nd = int(rng.integers(1, 4))
        stairs = np.round(hot * np.linspace(1.0, rng.uniform(1.0, 2.5), nd), 1)
        init = int(rng.integers(0, 2))
        units.append(UnitSpec(
            id=i, bus=int(rng.integers(0, n_buses)), p_max=pmax, p_min=pmin,
            a=float(np.round(rng.uniform(0, 400), 1)), b=float(np.round(rng.uniform(8, 30), 2)),
            c=float(np.round(rng.choice([0.0, rng.uniform(0.001, 0.03)]), 4)),
            startup_stairs=tuple(stairs), shutdown_cost=float(np.round(rng.uniform(0, 100), 1)),
            ramp_up=float(np.round(rng.uniform(0.3, 1.0) * pmax, 1)),
            ramp_down=float(np.round(rng.uniform(0.3, 1.0) * pmax, 1)),
            startup_ramp=su, shutdown_ramp=sd,
            min_up=int(rng.integers(1, 4)), min_down=int(rng.integers(1, 4)),
            init_status=init, init_duration=int(rng.integers(1, 5)),
        ))
    lines = []
    if with_lines and n_buses > 1:
        # spanning path plus a few chords
        for j in range(1, n_buses):
            lines.append(Line(int(rng.integers(0, j)), j, float(rng.uniform(0.05, 0.3)),
                              -float(rng.uniform(80, 300)), float(rng.uniform(80, 300))))
    return GridSpec(n_buses=n_buses, units=units, lines=lines, slack_bus=0,
                    reserve_fraction=reserve_fraction)


def random_demand(rng: np.random.Generator, grid: GridSpec, horizon: int,
                  lo: float = 0.2, hi: float = 0.75) -> np.ndarray:
    """T x M demand whose total is a random fraction of installed capacity."""
    cap = float(sum(u.p_max for u in grid.units))
    total = rng.uniform(lo, hi, size=horizon) * cap
    share = rng.dirichlet(np.ones(grid.n_buses))
    return np.round(np.outer(total, share), 3)
