"""Command-line entry point (``python3 -m ucrl <command>``).

Exit codes: 0 success, 2 configuration error, 3 infeasible instance,
4 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import sys
import warnings
from pathlib import Path

import numpy as np

from . import experiments as ex
from .actiongen import build_candidate_set
from .env import UCEnv, reset
from .instances import synthetic_loads
from .io import ConfigError, ingest, read_grid, write_loads
from .learner import TrainingDivergence
from .model import IslandingError, StructuralError

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_DIVERGED = 0, 2, 3, 4


def _config(args) -> ex.ExperimentConfig:
    over = {"seed": args.seed, "out_dir": args.out_dir, "time_limit": args.time_limit,
            "gap": args.gap}
    return ex.load_config(args.config, **over)


def cmd_ingest(args) -> int:
    cfg = _config(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        grid, loads, notes = ingest(args.grid or cfg.grid_path, args.loads or cfg.loads_path,
                                    args.scale, cfg.forecast_window)
    print(f"units={grid.n_units} buses={grid.n_buses} lines={grid.n_lines} "
          f"periods={loads.horizon} days={loads.n_days}")
    for n in notes:
        print(n)
    return EXIT_OK


def cmd_gen_loads(args) -> int:
    cfg = _config(args)
    grid = read_grid(args.grid or cfg.grid_path)
    cap = float(np.sum(grid.p_max))
    share = np.ones(grid.n_buses) if args.bus_share is None else np.array(args.bus_share)
    if len(share) != grid.n_buses:
        raise ConfigError(f"--bus-share needs {grid.n_buses} values")
    seed = cfg.trainer.seed if args.seed is None else args.seed
    loads = synthetic_loads(args.days, args.peak_fraction * cap, share, seed=seed)
    write_loads(args.output, loads)
    print(f"wrote {loads.horizon} periods to {args.output} (peak {loads.total.max():.1f} MW)")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)

    def progress(row):
        if not args.quiet:
            print(f"member {row['member']} episode {row['episode']} "
                  f"eps={row['epsilon']:.3f} val={row['mean_validation_cost']:.2f}")

    res = ex.train(cfg, progress)
    for m in res.members:
        print(f"member {m.member}: best episode {m.best_episode}, "
              f"validation {m.best_validation_cost:.2f}" + (f" ({m.diverged})" if m.diverged
                                                             else ""))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    res = ex.evaluate(cfg)
    print(f"best member {res.best_member}: week cost {res.best_total:.2f}; "
          f"per-day ensemble total {res.day_costs.sum():.2f}; {res.wall_time:.2f} s")
    flagged = sorted({d for t in res.member_terminal_days for d in t})
    if flagged:
        print(f"terminal penalties on days {[d + 1 for d in flagged]}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    cfg = _config(args)
    res = ex.baseline(cfg)
    for d, (c, g, s) in enumerate(zip(res.day_costs, res.gaps, res.statuses)):
        print(f"day {d + 1}: {c:.2f} ({s}, gap {g:.2e})")
    if res.infeasible_days:
        print(f"infeasible days excluded: {[d + 1 for d in res.infeasible_days]}")
    return EXIT_OK


def cmd_compare(args) -> int:
    if args.costs:
        m, b = args.costs
        print(f"delta = {ex.delta_percent(m, b):.2f}")
        return EXIT_OK
    cfg = _config(args)
    rows = ex.compare_files(cfg.out_dir)
    for r in rows:
        print(f"day {r.day}: baseline {r.baseline:.2f} rl {r.costs['rl']:.2f} "
              f"delta {r.deltas['rl']:.2f}")
    return EXIT_OK


def cmd_outage(args) -> int:
    cfg = _config(args)
    unit = None if args.unit is None else args.unit - 1
    line = None if args.line is None else args.line - 1
    res = ex.run_outage(cfg, unit=unit, line=line)
    print(f"{res.scenario}: rl {res.rl.best_total:.2f} baseline {res.baseline.total:.2f}")
    flagged = sorted({d for t in res.rl.member_terminal_days for d in t})
    if flagged:
        print(f"terminal penalties on days {[d + 1 for d in flagged]}")
    return EXIT_OK


def cmd_actions(args) -> int:
    cfg = _config(args)
    data = ex.load_data(cfg)
    env = UCEnv(data.grid, data.train, cfg.actions)
    state = reset(data.grid, data.train, args.day - 1)
    # walk the base policy up to the requested period of the day
    for _ in range(args.period - 1):
        cs = env.candidates(state)
        if cs.empty:
            raise ex.InfeasibleInstance("no candidates on the way to the requested period")
        state = env.step(state, cs[0]).next_state
    cs = build_candidate_set(state, data.grid, data.train, cfg.actions)
    out = sys.stdout if args.output == "-" else open(args.output, "w", newline="")
    try:
        w = csv.writer(out)
        w.writerow(["member", "source", "z", "rank"]
                   + [f"unit_{i + 1}" for i in range(data.grid.n_units)])
        for k, (a, pv) in enumerate(zip(cs.members, cs.provenance)):
            w.writerow([k, pv.source, pv.z, pv.rank] + [int(x) for x in a])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _config(args)
    written = ex.report(cfg.out_dir)
    for k, p in written.items():
        print(f"{k}: {p}")
    return EXIT_OK


def _global_flags(default) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=default, help="experiment JSON file")
    common.add_argument("--seed", type=int, default=default)
    common.add_argument("--out-dir", default=default)
    common.add_argument("--time-limit", type=float, default=default,
                        help="seconds per exact solve")
    common.add_argument("--gap", type=float, default=default, help="relative MIP gap target")
    return common


def build_parser() -> argparse.ArgumentParser:
    # flags are accepted before or after the subcommand; the subcommand copy
    # must not overwrite values given before it
    common = _global_flags(argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="ucrl", parents=[_global_flags(None)],
                                description="Unit commitment with multi-step deep Q-learning")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="parse and check a grid and load file")
    s.add_argument("--grid")
    s.add_argument("--loads")
    s.add_argument("--scale", type=float, default=1.0)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("gen-loads", parents=[common], help="write a synthetic load CSV")
    s.add_argument("--grid")
    s.add_argument("--days", type=int, default=19)
    s.add_argument("--peak-fraction", type=float, default=0.8)
    s.add_argument("--bus-share", type=float, nargs="+")
    s.add_argument("--output", "-o", required=True)
    s.set_defaults(func=cmd_gen_loads)

    s = sub.add_parser("train", parents=[common], help="train the ensemble")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common], help="greedy test-week rollouts")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("baseline", parents=[common], help="rolling exact UC on the test week")
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("compare", parents=[common], help="per-day cost differences")
    s.add_argument("--costs", type=float, nargs=2, metavar=("METHOD", "BASELINE"),
                   help="just print the percentage difference of two numbers")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("outage", parents=[common], help="evaluate under a contingency")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--unit", type=int, help="1-based unit number")
    g.add_argument("--line", type=int, help="1-based line number")
    s.set_defaults(func=cmd_outage)

    s = sub.add_parser("actions", parents=[common], help="dump a candidate action set as CSV")
    s.add_argument("--day", type=int, default=1, help="1-based training day")
    s.add_argument("--period", type=int, default=1, help="1-based period within the day")
    s.add_argument("--output", "-o", default="-")
    s.set_defaults(func=cmd_actions)

    s = sub.add_parser("report", parents=[common], help="training curve and cost/time CSVs")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ex.InfeasibleInstance, IslandingError, StructuralError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
