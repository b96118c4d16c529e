# %% [markdown]
# # Train a small ensemble and compare with the exact baseline
#
# A shortened version of the desk experiment: two members, ten episodes.
# The full run is `python3 -m ucrl train --config configs/desk.json`.

# %%
import dataclasses

import numpy as np

import ucrl.experiments as ex
from ucrl.learner import TrainerConfig

cfg = ex.ExperimentConfig(out_dir="runs/demo",
                          trainer=TrainerConfig(members=2, episodes=10, seed=1))

# %%
ens = ex.train(cfg, progress=lambda r: print(
    f"member {r['member']} ep {r['episode']:2d} eps {r['epsilon']:.2f} "
    f"val {r['mean_validation_cost']:.0f}"))

# %%
rl = ex.evaluate(cfg, [m.best for m in ens.members])
base = ex.baseline(cfg)
rows = ex.compare_files(cfg.out_dir)
for r in rows:
    print(f"day {r.day}: baseline {r.baseline:10.2f}  rl {r.costs['rl']:10.2f}  "
          f"delta {r.deltas['rl']:+.3f}%")
print(f"week: rl {rl.day_costs.sum():.2f} vs baseline {base.total:.2f}")

# %% [markdown]
# Curves across members, as written by `ucrl report`.

# %%
for r in ex.summarize_curves([row for m in ens.members for row in m.log]):
    print(f"episode {r['episode']:2d}: {r['mean']:.0f} +- {r['std']:.0f}")
