"""Experiment orchestration: data splits, baseline, agent evaluation, comparisons.

Everything here is driven by an :class:`ExperimentConfig` and writes flat CSV
files into an output directory.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .actiongen import ActionConfig
from .env import UCEnv, write_trace
from .exact import ChainState, SolveBudget, UcSubproblem, solve_uc_bnb
from .instances import FIVE_UNIT_BUS_SHARE, synthetic_loads
from .io import ConfigError, data_path, read_grid, read_loads, write_golden
from .learner import (
    EnsembleResult,
    QNetworkParams,
    TrainerConfig,
    greedy_rollout,
    load_checkpoint,
    save_checkpoint,
    train_ensemble,
    write_training_log,
)
from .model import (
    GridSpec,
    LoadScenario,
    Schedule,
    StructuralError,
    UCError,
    validate_schedule,
)


class InfeasibleInstance(UCError):
    """The instance (or a contingency of it) cannot be served."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    grid_path: str = str(data_path("five_unit.json"))
    loads_path: str = str(data_path("five_unit_loads.csv"))
    out_dir: str = "runs/desk"
    load_scale: float = 1.0
    train_days: int = 10
    val_days: int = 2
    test_days: int = 7
    forecast_window: int = 9
    trainer: TrainerConfig = TrainerConfig(members=4, episodes=30)
    actions: ActionConfig = ActionConfig()
    baseline_days: int = 2  # optimisation horizon of the exact baseline, in days
    time_limit: float = 60.0  # per baseline solve, seconds
    gap: float = 0.0
    unit_outages: tuple = ()  # 0-based unit indices
    line_outages: tuple = ()  # 0-based line indices

    def __post_init__(self):
        for name in ("train_days", "val_days", "test_days"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def budget(self) -> SolveBudget:
        return SolveBudget(wall_time=self.time_limit, gap=self.gap)


def load_config(path: Optional[str] = None, **overrides) -> ExperimentConfig:
    """Read a JSON config; relative paths resolve against the config's directory.

    ``overrides`` (top-level fields, or ``seed``) win over the file.
    """
    doc: dict = {}
    base = Path.cwd()
    if path is not None:
        p = Path(path)
        try:
            doc = json.loads(p.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        base = p.parent
    trainer = dict(doc.pop("trainer", {}))
    actions = dict(doc.pop("actions", {}))
    seed = overrides.pop("seed", None)
    if seed is not None:
        trainer["seed"] = int(seed)
    if "hidden" in trainer:
        trainer["hidden"] = tuple(trainer["hidden"])
    if "budget_seconds" in actions:
        actions["budget"] = SolveBudget(wall_time=float(actions.pop("budget_seconds")))
    for key in ("grid_path", "loads_path"):
        if key in doc and not Path(doc[key]).is_absolute():
            doc[key] = str((base / doc[key]).resolve())
    for key in ("unit_outages", "line_outages"):
        if key in doc:
            doc[key] = tuple(int(x) for x in doc[key])
    doc.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    try:
        return ExperimentConfig(trainer=TrainerConfig(**{**dataclasses.asdict(
            ExperimentConfig.trainer), **trainer}), actions=ActionConfig(**actions), **doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


@dataclass(frozen=True, eq=False)
class DataSplit:
    grid: GridSpec
    train: LoadScenario
    val: LoadScenario
    test: LoadScenario


def load_data(cfg: ExperimentConfig) -> DataSplit:
    """Grid plus consecutive train / validation / test windows of the load file."""
    grid = read_grid(cfg.grid_path)
    loads = read_loads(cfg.loads_path, cfg.forecast_window)
    if loads.n_buses != grid.n_buses:
        raise StructuralError(f"load file has {loads.n_buses} buses, grid has {grid.n_buses}")
    if cfg.load_scale != 1.0:
        loads = loads.scaled(cfg.load_scale)
    T = loads.periods_per_day
    need = (cfg.train_days + cfg.val_days + cfg.test_days) * T
    if loads.horizon < need:
        raise ConfigError(f"load file has {loads.horizon} periods, splits need {need}")
    a = cfg.train_days * T
    b = a + cfg.val_days * T
    return DataSplit(grid, loads.window(0, a), loads.window(a, b), loads.window(b, need))


# ---------------------------------------------------------------------------
# contingencies


def unit_outage_grid(grid: GridSpec, unit: int) -> GridSpec:
    """Grid whose unit ``unit`` starts off, with its off-time counter at its minimum down time."""
    if not 0 <= unit < grid.n_units:
        raise ConfigError(f"unit {unit} outside 0..{grid.n_units - 1}")
    units = list(grid.units)
    u = units[unit]
    units[unit] = dataclasses.replace(u, init_status=0, init_duration=u.min_down, init_power=0.0)
    return grid.replace(units=units)


def line_outage_grid(grid: GridSpec, line: int) -> GridSpec:
    """Grid without line ``line``; PTDFs are recomputed (islanding raises)."""
    if not 0 <= line < grid.n_lines:
        raise ConfigError(f"line {line} outside 0..{grid.n_lines - 1}")
    return grid.replace(lines=[ln for k, ln in enumerate(grid.lines) if k != line])


# ---------------------------------------------------------------------------
# baseline


@dataclass
class BaselineResult:
    day_costs: list
    gaps: list
    proved: list
    statuses: list
    wall_times: list
    schedule: Optional[Schedule]  # realised schedule over every solved day
    infeasible_days: list

    @property
    def total(self) -> float:
        return float(sum(c for c in self.day_costs if math.isfinite(c)))


def run_baseline(grid: GridSpec, loads: LoadScenario, budget: SolveBudget = SolveBudget(),
                 horizon_days: int = 2, excluded: frozenset = frozenset()) -> BaselineResult:
    """Rolling exact UC: solve ``horizon_days`` ahead, keep the first day, move on.

    The lookahead is truncated at the end of ``loads``. An infeasible day is
    recorded and the next day restarts from the grid's initial condition.
    """
    T = loads.periods_per_day
    start = ChainState.initial(grid)
    costs, gaps, proved, stats, times, bad = [], [], [], [], [], []
    vs, ps = [], []
    for d in range(loads.n_days):
        lo = d * T
        hi = min(lo + horizon_days * T, loads.horizon)
        sub = UcSubproblem(grid, loads.demand[lo:hi], start=start, excluded_units=excluded)
        t0 = time.perf_counter()
        res = solve_uc_bnb(sub, budget)
        times.append(time.perf_counter() - t0)
        stats.append(res.status)
        if not res.found:
            costs.append(math.inf)
            gaps.append(math.inf)
            proved.append(False)
            bad.append(d)
            start = ChainState.initial(grid)
            vs, ps = None, None
            continue
        first = res.breakdown[:T]
        costs.append(float(first.sum()))
        gaps.append(res.gap)
        proved.append(res.proved_optimal)
        if vs is not None:
            vs.append(res.schedule.v[:T])
            ps.append(res.schedule.p[:T])
        # state at the end of the first day
        start = _state_after(grid, start, loads.demand[lo:lo + T], res.schedule.v[:T], excluded)
    sched = Schedule(np.vstack(vs), np.vstack(ps)) if vs else None
    return BaselineResult(costs, gaps, proved, stats, times, sched, bad)


def _state_after(grid, start, demand, v_rows, excluded):
    from .exact import step_period

    s = start
    for t, v in enumerate(v_rows):
        res = step_period(grid, s, v, demand[t])
        if res is None:  # cannot happen for a schedule the solver produced
            raise InfeasibleInstance("baseline schedule failed to replay")
        s = res.state
    return s


# ---------------------------------------------------------------------------
# agent evaluation


@dataclass
class RlResult:
    member_day_costs: np.ndarray  # M x days
    member_terminal_days: list
    day_costs: np.ndarray  # per-day minimum over members
    best_member: int  # member with the lowest week total
    wall_time: float
    rollouts: list

    @property
    def best_total(self) -> float:
        return float(self.member_day_costs[self.best_member].sum())


def run_rl(members: Sequence[QNetworkParams], env: UCEnv) -> RlResult:
    """Greedy rollout of every member over all days of ``env``."""
    t0 = time.perf_counter()
    rolls = [greedy_rollout(env, m.target, keep_transitions=True) for m in members]
    wall = time.perf_counter() - t0
    C = np.array([r.day_costs for r in rolls])
    best = int(np.argmin(C.sum(axis=1)))
    return RlResult(C, [r.terminal_days for r in rolls], C.min(axis=0), best, wall, rolls)


def rollout_schedule(rollout) -> Schedule:
    v = np.array([tr.next_state.v for tr in rollout.transitions])
    p = np.array([tr.next_state.p for tr in rollout.transitions])
    return Schedule(v, p)


# ---------------------------------------------------------------------------
# comparison and reporting


def delta_percent(method: float, baseline: float) -> float:
    """Percentage difference of ``method`` relative to ``baseline``."""
    return 100.0 * (float(method) - float(baseline)) / float(baseline)


@dataclass(frozen=True)
class ComparisonRow:
    day: int
    baseline: float
    costs: dict  # method name -> cost
    deltas: dict  # method name -> percent vs baseline


def compare(days: Sequence[int], baseline: Sequence[float], methods: dict,
            path=None) -> list[ComparisonRow]:
    """Per-day comparison table; rows with a missing or non-finite value are skipped."""
    rows = []
    for k, d in enumerate(days):
        base = baseline[k]
        vals = {m: c[k] for m, c in methods.items()}
        if not math.isfinite(base) or base == 0 or not all(math.isfinite(v) for v in vals.values()):
            continue
        rows.append(ComparisonRow(int(d), float(base), vals,
                                  {m: delta_percent(v, base) for m, v in vals.items()}))
    if path is not None:
        names = list(methods)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["day", "baseline"] + names + [f"delta_{m}" for m in names])
            for r in rows:
                w.writerow([r.day, repr(r.baseline)] + [repr(float(r.costs[m])) for m in names]
                           + [f"{r.deltas[m]:.6f}" for m in names])
    return rows


def summarize_curves(log_rows: Sequence[dict]) -> list[dict]:
    """Per-episode mean and sample standard deviation of validation cost across members."""
    by_ep: dict = {}
    for r in log_rows:
        by_ep.setdefault(int(r["episode"]), []).append(float(r["mean_validation_cost"]))
    out = []
    for ep in sorted(by_ep):
        xs = np.array(by_ep[ep])
        std = float(xs.std(ddof=1)) if len(xs) > 1 else 0.0
        out.append({"episode": ep, "mean": float(xs.mean()), "std": std, "members": len(xs)})
    return out


def read_csv_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def report(out_dir) -> dict:
    """Write ``curve.csv`` (training curve) and ``cost_time.csv`` from a run directory.

    ``cost_time.csv`` is built from the ``*_timing.csv`` files and so is the
    one report that differs between otherwise identical runs.
    """
    out = Path(out_dir)
    written = {}
    log = out / "training_log.csv"
    if log.exists():
        rows = summarize_curves(read_csv_rows(log))
        with open(out / "curve.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["episode", "mean", "std", "members"])
            w.writeheader()
            for r in rows:
                w.writerow({**r, "mean": repr(r["mean"]), "std": repr(r["std"])})
        written["curve"] = out / "curve.csv"
    series = []
    for name in ("baseline", "rl"):
        f, ft = out / f"{name}_costs.csv", out / f"{name}_timing.csv"
        if f.exists() and ft.exists():
            cost = sum(float(r["cost"]) for r in read_csv_rows(f) if math.isfinite(float(r["cost"])))
            wall = sum(float(r["wall_time"]) for r in read_csv_rows(ft))
            series.append((name, wall, cost))
    if series:
        with open(out / "cost_time.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "wall_clock_s", "total_cost"])
            for name, wall, cost in series:
                w.writerow([name, f"{wall:.3f}", repr(cost)])
        written["cost_time"] = out / "cost_time.csv"
    return written


# ---------------------------------------------------------------------------
# end-to-end steps used by the CLI


def train(cfg: ExperimentConfig, progress=None) -> EnsembleResult:
    data = load_data(cfg)
    env = UCEnv(data.grid, data.train, cfg.actions)
    val = UCEnv(data.grid, data.val, cfg.actions)
    res = train_ensemble(env, val, cfg.trainer, progress)
    out = Path(cfg.out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    fp = cfg.trainer.fingerprint()
    for m in res.members:
        if m.best is not None:
            save_checkpoint(out / "checkpoints" / f"member_{m.member}.npz", m.best, fp,
                            {"member": m.member, "episode": m.best_episode,
                             "validation_cost": m.best_validation_cost, "seed": m.seed})
    write_training_log(out / "training_log.csv", [r for m in res.members for r in m.log])
    with open(out / "members.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["member", "seed", "best_episode", "best_validation_cost", "diverged"])
        for m in res.members:
            w.writerow([m.member, m.seed, m.best_episode, repr(float(m.best_validation_cost)),
                        m.diverged or ""])
    return res


def load_members(out_dir) -> list[QNetworkParams]:
    files = sorted(Path(out_dir, "checkpoints").glob("member_*.npz"),
                   key=lambda p: int(p.stem.split("_")[1]))
    if not files:
        raise ConfigError(f"no checkpoints under {out_dir}/checkpoints")
    return [load_checkpoint(f)[0] for f in files]


# wall-clock measurements live in their own files so that every other output
# of a run is reproducible byte for byte
TIMING_FIELDS = ["day", "wall_time"]


def write_day_costs(path, rows, fields) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        w.writerows(rows)


def evaluate(cfg: ExperimentConfig, members=None, grid: Optional[GridSpec] = None,
             actions: Optional[ActionConfig] = None, tag: str = "rl") -> RlResult:
    data = load_data(cfg)
    grid = data.grid if grid is None else grid
    members = load_members(cfg.out_dir) if members is None else members
    env = UCEnv(grid, data.test, actions or cfg.actions)
    res = run_rl(members, env)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    per_day_wall = res.wall_time / max(1, data.test.n_days)
    write_day_costs(out / f"{tag}_costs.csv",
                    [[d + 1, repr(float(res.day_costs[d])),
                      int(np.argmin(res.member_day_costs[:, d])),
                      int(any(d in t for t in res.member_terminal_days))]
                     for d in range(data.test.n_days)],
                    ["day", "cost", "member", "terminal"])
    write_day_costs(out / f"{tag}_timing.csv",
                    [[d + 1, f"{per_day_wall:.6f}"] for d in range(data.test.n_days)],
                    TIMING_FIELDS)
    write_day_costs(out / f"{tag}_member_costs.csv",
                    [[m, d + 1, repr(float(res.member_day_costs[m, d])),
                      int(d in res.member_terminal_days[m])]
                     for m in range(len(members)) for d in range(data.test.n_days)],
                    ["member", "day", "cost", "terminal"])
    write_trace(out / f"{tag}_trace.csv", res.rollouts[res.best_member].transitions)
    return res


def baseline(cfg: ExperimentConfig, grid: Optional[GridSpec] = None,
             excluded: frozenset = frozenset(), tag: str = "baseline") -> BaselineResult:
    data = load_data(cfg)
    grid = data.grid if grid is None else grid
    res = run_baseline(grid, data.test, cfg.budget, cfg.baseline_days, excluded)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_day_costs(out / f"{tag}_costs.csv",
                    [[d + 1, repr(float(res.day_costs[d])), repr(float(res.gaps[d])),
                      int(res.proved[d]), res.statuses[d]] for d in range(data.test.n_days)],
                    ["day", "cost", "gap", "proved_optimal", "status"])
    write_day_costs(out / f"{tag}_timing.csv",
                    [[d + 1, f"{res.wall_times[d]:.6f}"] for d in range(data.test.n_days)],
                    TIMING_FIELDS)
    return res


def compare_files(out_dir, method_file="rl_costs.csv", baseline_file="baseline_costs.csv",
                  out_name="comparison.csv") -> list[ComparisonRow]:
    out = Path(out_dir)
    base = {int(r["day"]): float(r["cost"]) for r in read_csv_rows(out / baseline_file)}
    meth = {int(r["day"]): float(r["cost"]) for r in read_csv_rows(out / method_file)}
    days = sorted(set(base) & set(meth))
    return compare(days, [base[d] for d in days], {"rl": [meth[d] for d in days]},
                   out / out_name)


@dataclass
class OutageResult:
    scenario: str
    rl: RlResult
    baseline: BaselineResult


def run_outage(cfg: ExperimentConfig, unit: Optional[int] = None, line: Optional[int] = None,
               members=None) -> OutageResult:
    """Evaluate the trained ensemble and the baseline on a contingent system.

    A unit outage holds the unit off from the start of the test week with its
    state reset (off, zero output, off-time counter at its minimum down
    time); a line outage removes the line from the network.
    """
    data = load_data(cfg)
    if (unit is None) == (line is None):
        raise ConfigError("give exactly one of unit or line")
    if unit is not None:
        grid = unit_outage_grid(data.grid, unit)
        actions = dataclasses.replace(cfg.actions, unavailable=frozenset({unit}))
        excluded = frozenset({unit})
        tag = f"outage_unit{unit + 1}"
    else:
        grid = line_outage_grid(data.grid, line)
        actions = cfg.actions
        excluded = frozenset()
        tag = f"outage_line{line + 1}"
    cap = float(sum(u.p_max for k, u in enumerate(grid.units) if k not in excluded))
    peak = float(data.test.total.max())
    if peak + grid.reserve_requirement(peak) > cap:
        raise InfeasibleInstance(f"{tag}: peak {peak:.1f} MW plus reserve exceeds remaining "
                                 f"capacity {cap:.1f} MW")
    rl = evaluate(cfg, members, grid, actions, tag=f"{tag}_rl")
    base = baseline(cfg, grid, excluded, tag=f"{tag}_baseline")
    compare_files(cfg.out_dir, f"{tag}_rl_costs.csv", f"{tag}_baseline_costs.csv",
                  f"{tag}_comparison.csv")
    return OutageResult(tag, rl, base)


def write_goldens(path=None, budget: SolveBudget = SolveBudget()) -> list:
    """Regenerate the reference optima shipped next to the 5-unit instance."""
    cfg = ExperimentConfig()
    data = load_data(cfg)
    rows = []
    first = UcSubproblem(data.grid, data.train.demand[:24])
    r = solve_uc_bnb(first, budget)
    rows.append(("five_unit_day1", r.cost, r.gap))
    week = solve_uc_bnb(UcSubproblem(data.grid, data.test.demand), budget)
    rows.append(("five_unit_test_week", week.cost, week.gap))
    base = run_baseline(data.grid, data.test, budget, cfg.baseline_days)
    for d, (c, g) in enumerate(zip(base.day_costs, base.gaps)):
        rows.append((f"five_unit_test_day{d + 1}", c, g))
    write_golden(path or data_path("five_unit_golden.csv"), rows)
    return rows
