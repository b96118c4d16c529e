"""Reading and writing grids, load series and golden files.

Grid files are JSON documents; bus numbers in files are 1-based::

    {"n_buses": 3, "slack_bus": 1, "reserve_fraction": 0.1,
     "lines": [{"from": 1, "to": 2, "reactance": 0.1, "flow_min": -250, "flow_max": 250}],
     "units": [{"id": 1, "bus": 1, "p_max": 200, "p_min": 80, "a": 500, "b": 12, "c": 0.004,
                "startup_stairs": [900, 1800], "shutdown_cost": 100,
                "ramp_up": 80, "ramp_down": 80, "startup_ramp": 100, "shutdown_ramp": 100,
                "min_up": 5, "min_down": 4, "init_status": 1, "init_duration": 8}]}

Load files are CSV with header ``period,bus_1,...,bus_M`` and one row per
period (MW).
"""

from __future__ import annotations

import csv
import json
import warnings
from pathlib import Path
from typing import Optional

import numpy as np

from .model import GridSpec, Line, LoadScenario, StructuralError, UCError, UnitSpec


class ConfigError(UCError):
    """A file could not be parsed or is inconsistent."""


UNIT_FIELDS = ("p_max", "p_min", "a", "b", "c", "shutdown_cost", "ramp_up", "ramp_down",
               "startup_ramp", "shutdown_ramp", "min_up", "min_down", "init_status",
               "init_duration")


def grid_to_dict(grid: GridSpec) -> dict:
    units = []
    for u in grid.units:
        d = {"id": u.id + 1, "bus": u.bus + 1}
        for f in UNIT_FIELDS:
            d[f] = getattr(u, f)
        d["startup_stairs"] = list(u.startup_stairs)
        if u.init_power is not None:
            d["init_power"] = u.init_power
        units.append(d)
    lines = [{"from": ln.from_bus + 1, "to": ln.to_bus + 1, "reactance": ln.reactance,
              "flow_min": ln.flow_min, "flow_max": ln.flow_max} for ln in grid.lines]
    return {"n_buses": grid.n_buses, "slack_bus": grid.slack_bus + 1,
            "reserve_fraction": grid.reserve_fraction, "lines": lines, "units": units}


def grid_from_dict(doc: dict) -> GridSpec:
    try:
        n_buses = int(doc["n_buses"])
        units = []
        for k, d in enumerate(doc["units"]):
            kw = {f: d[f] for f in UNIT_FIELDS}
            units.append(UnitSpec(id=int(d.get("id", k + 1)) - 1, bus=int(d["bus"]) - 1,
                                  startup_stairs=tuple(float(x) for x in d["startup_stairs"]),
                                  init_power=d.get("init_power"), **kw))
        lines = [Line(int(d["from"]) - 1, int(d["to"]) - 1, float(d["reactance"]),
                      float(d["flow_min"]), float(d["flow_max"])) for d in doc.get("lines", [])]
    except KeyError as exc:
        raise ConfigError(f"grid file: missing field {exc}") from None
    return GridSpec(n_buses=n_buses, units=units, lines=lines,
                    slack_bus=int(doc.get("slack_bus", 1)) - 1,
                    reserve_fraction=float(doc.get("reserve_fraction", 0.1)))


def read_grid(path) -> GridSpec:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return grid_from_dict(doc)


def write_grid(path, grid: GridSpec) -> None:
    Path(path).write_text(json.dumps(grid_to_dict(grid), indent=2) + "\n")


def read_loads(path, forecast_window: int = 9, periods_per_day: int = 24) -> LoadScenario:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty file") from None
        if not header or header[0].strip() != "period":
            raise ConfigError(f"{path}: line 1: header must start with 'period'")
        n_bus = len(header) - 1
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != n_bus + 1:
                raise ConfigError(f"{path}: line {lineno}: expected {n_bus + 1} fields, "
                                  f"got {len(rec)}")
            try:
                rows.append([float(x) for x in rec[1:]])
            except ValueError as exc:
                raise ConfigError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise ConfigError(f"{path}: no load rows")
    return LoadScenario(np.array(rows), forecast_window, periods_per_day)


def write_loads(path, loads: LoadScenario) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period"] + [f"bus_{j + 1}" for j in range(loads.n_buses)])
        for t, row in enumerate(loads.demand, start=1):
            w.writerow([t] + [repr(float(x)) for x in row])


def ingest(grid_path, loads_path, scale: float = 1.0, forecast_window: int = 9):
    """Parse and cross-check a grid and a load file.

    Returns ``(grid, loads, notes)``; ``notes`` lists warnings (also issued
    through :mod:`warnings`), including the peak-to-capacity ratio.
    """
    grid = read_grid(grid_path)
    loads = read_loads(loads_path, forecast_window)
    if loads.n_buses != grid.n_buses:
        raise StructuralError(f"load file has {loads.n_buses} buses, grid file has "
                              f"{grid.n_buses}")
    if scale != 1.0:
        loads = loads.scaled(scale)
    notes = []
    cap = float(np.sum(grid.p_max))
    peak = float(loads.total.max())
    ratio = peak / cap if cap > 0 else float("inf")
    notes.append(f"peak/capacity = {ratio:.3f}")
    if peak == 0:
        notes.append("warning: all demand is zero")
    if peak > cap:
        notes.append("warning: peak demand exceeds installed capacity")
    for n in notes:
        if n.startswith("warning"):
            warnings.warn(n[len("warning: "):], stacklevel=2)
    return grid, loads, notes


GOLDEN_FIELDS = ["instance_id", "cost", "gap"]


def read_golden(path) -> dict:
    with open(path, newline="") as fh:
        return {r["instance_id"]: (float(r["cost"]), float(r["gap"]))
                for r in csv.DictReader(fh)}


def write_golden(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GOLDEN_FIELDS)
        for iid, cost, gap in rows:
            w.writerow([iid, repr(float(cost)), repr(float(gap))])


def data_path(name: str) -> Path:
    """Path of a file shipped in the package's ``data`` directory."""
    return Path(__file__).parent / "data" / name
