"""Unit commitment with optimisation-assisted ensemble multi-step deep Q-learning.

Layers, bottom up:

``model``       units, grids, loads, schedules, costs, constraint checks, PTDFs
``dispatch``    single-period economic dispatch
``exact``       exhaustive and branch-and-bound UC solvers, toggle problems
``actiongen``   candidate action sets
``env``         the episodic MDP and feature encoding
``learner``     numpy Q-network, n-step training loop, ensembles, checkpoints
``experiments`` data splits, baseline, evaluation, outages, reports
``cli``         ``python3 -m ucrl``
"""

from .actiongen import ActionConfig, CandidateSet, build_candidate_set, compute_locks
from .dispatch import DispatchProblem, DispatchSolution, effective_bounds, solve_ed
from .env import MdpState, Transition, UCEnv, encode_features
from .exact import (
    ChainState,
    SolveBudget,
    UcResult,
    UcSubproblem,
    enumerate_uc,
    solve_toggle_problem,
    solve_uc_bnb,
)
from .learner import QNetworkParams, TrainerConfig, train_ensemble, train_member
from .model import (
    GridSpec,
    Line,
    LoadScenario,
    Schedule,
    UnitSpec,
    ViolationReport,
    schedule_cost,
    validate_schedule,
)

__version__ = "0.1.0"
