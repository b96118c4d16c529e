# %% [markdown]
# # Dispatch and exact commitment on the 5-unit system
#
# Load the shipped grid, look at its cost curves, dispatch one period and
# solve the first training day exactly.

# %%
import numpy as np

from ucrl.dispatch import DispatchProblem, solve_ed
from ucrl.exact import UcSubproblem, solve_uc_bnb
from ucrl.io import data_path, read_grid, read_loads
from ucrl.model import priorities, validate_schedule

grid = read_grid(data_path("five_unit.json"))
loads = read_loads(data_path("five_unit_loads.csv"))
print(f"{grid.n_units} units, {grid.n_buses} buses, {grid.n_lines} lines, {loads.n_days} days")

# %% [markdown]
# Priority index: average fuel price at full output. Lower means cheaper base load.

# %%
rho = priorities(grid)
for i in np.argsort(rho):
    u = grid.units[i]
    print(f"unit {i + 1}: {rho[i]:6.2f} $/MWh  ({u.p_min}-{u.p_max} MW, bus {u.bus + 1})")

# %% [markdown]
# One-period dispatch with the two big units on, starting from their minimum output.

# %%
v = np.array([1, 1, 0, 0, 0])
p_prev = grid.init_power()
sol = solve_ed(DispatchProblem(grid, loads.demand[0], v, p_prev, grid.init_status()))
print("dispatch:", np.round(sol.p, 2), "cost:", round(sol.production_cost, 2))
print("line flows:", np.round(grid.line_flows(sol.p, loads.demand[0]), 2))

# %% [markdown]
# The whole first day, solved to proven optimality.

# %%
res = solve_uc_bnb(UcSubproblem(grid, loads.demand[:24]))
print(res.status, f"cost {res.cost:.2f}", f"nodes {res.nodes}")
print("commitment (hours x units):")
print(res.schedule.v.T)
print("violations:", len(validate_schedule(grid, loads.window(0, 24), res.schedule)))
