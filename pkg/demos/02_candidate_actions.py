# %% [markdown]
# # Candidate action sets along a day
#
# Follow the base action through the first training day and print the
# small set of commitments the agent gets to choose from at each hour.

# %%
from ucrl.actiongen import CandidateGenerator
from ucrl.env import UCEnv
from ucrl.io import data_path, read_grid, read_loads

grid = read_grid(data_path("five_unit.json"))
loads = read_loads(data_path("five_unit_loads.csv"))
env = UCEnv(grid, loads)

# %%
state = env.reset(0)
total = 0.0
for hour in range(24):
    cs = env.candidates(state)
    locked = sorted(i + 1 for i in cs.theta)
    opts = " ".join("".join(map(str, a)) for a in cs)
    print(f"h{hour + 1:02d} demand {loads.total[state.t]:6.1f}  X={cs.X}  "
          f"locked {locked}  options {opts}")
    tr = env.step(state, cs[0])
    total += tr.cost
    state = tr.next_state
print(f"base-policy day cost: {total:.2f}")

# %% [markdown]
# Sets are a pure function of the state, so a generator memoises them.

# %%
gen = CandidateGenerator(grid, loads)
s0 = env.reset(0)
assert gen(s0) is gen(s0)
print("raw vs distinct:", gen(s0).raw_count, len(gen(s0)))
