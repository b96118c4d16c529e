"""Multi-step deep Q-learning over candidate action sets, in plain numpy.

The Q-function is an MLP on concatenated (state, action) features with two
ReLU hidden layers. Training follows the classic n-step queue: transitions
accumulate in a FIFO of length ``n``; when it is full (or the episode hits a
terminal state) a backward sweep turns the rewards into n-step returns, each
one drives an Adam step on the squared TD error, and the queue is emptied.
The target network is a frozen copy refreshed every ``target_sync`` gradient
steps and is also the network used for acting.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import zipfile
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .env import MdpState, Transition, UCEnv, encode_features, full_output_cost
from .model import GridSpec, StructuralError, UCError

CHECKPOINT_VERSION = 1


class TrainingDivergence(UCError):
    """Non-finite loss or parameters during training."""

    def __init__(self, message: str, member: Optional[int] = None):
        super().__init__(message if member is None else f"member {member}: {message}")
        self.member = member


@dataclass(frozen=True)
class TrainerConfig:
    members: int = 10  # M
    n_step: int = 24
    gamma: float = 0.99
    lr: float = 1e-4
    target_sync: int = 60  # gradient steps between target refreshes
    eps_min: float = 0.01
    eps_max: float = 1.0
    episodes: int = 50
    hidden: tuple = (150, 150)
    seed: int = 0
    reward_scale: Optional[float] = None  # None -> cost of one period at full output

    def __post_init__(self):
        if self.n_step < 1:
            raise ValueError("n_step must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.eps_min > self.eps_max:
            raise ValueError("eps_min > eps_max")
        if self.members < 1 or self.episodes < 1:
            raise ValueError("members and episodes must be positive")

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# network


class QNetworkParams:
    """Online weights, Adam moments and the target copy.

    ``weights`` is ``[W1, b1, W2, b2, ..., WL, bL]`` with ``Wk`` of shape
    ``(fan_in, fan_out)``.
    """

    def __init__(self, sizes: Sequence[int], weights: list, target: Optional[list] = None,
                 m: Optional[list] = None, v: Optional[list] = None, step: int = 0):
        self.sizes = tuple(int(s) for s in sizes)
        self.weights = weights
        self.target = [w.copy() for w in weights] if target is None else target
        self.m = [np.zeros_like(w) for w in weights] if m is None else m
        self.v = [np.zeros_like(w) for w in weights] if v is None else v
        self.step = int(step)
        for a, b in zip(self.weights, self.target):
            if a.shape != b.shape:
                raise StructuralError("online and target shapes differ")

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator) -> "QNetworkParams":
        weights = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
            weights.append(np.zeros(fan_out))
        return cls(sizes, weights)

    @classmethod
    def zeros(cls, sizes: Sequence[int]) -> "QNetworkParams":
        w = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w += [np.zeros((fan_in, fan_out)), np.zeros(fan_out)]
        return cls(sizes, w)

    @property
    def n_inputs(self) -> int:
        return self.sizes[0]

    def sync_target(self) -> None:
        self.target = [w.copy() for w in self.weights]

    def snapshot(self) -> "QNetworkParams":
        """Deep copy, safe to hand to another worker."""
        return copy.deepcopy(self)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) for w in self.weights)

    def arrays(self) -> dict:
        out = {}
        for name, group in (("w", self.weights), ("t", self.target), ("m", self.m),
                            ("v", self.v)):
            for k, a in enumerate(group):
                out[f"{name}{k}"] = a
        return out


def _forward(weights, X):
    """Batch forward pass; returns outputs and the hidden activations."""
    acts = [X]
    h = X
    n_layers = len(weights) // 2
    for k in range(n_layers):
        W, b = weights[2 * k], weights[2 * k + 1]
        z = h @ W + b
        h = np.maximum(z, 0.0) if k < n_layers - 1 else z
        acts.append(h)
    return h[..., 0], acts


def q_values(weights, X) -> np.ndarray:
    """Q for each row of the feature matrix ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != weights[0].shape[0]:
        raise StructuralError(f"feature length {X.shape[1]} != input size {weights[0].shape[0]}")
    return _forward(weights, X)[0]


def q_forward(params, features) -> float:
    """Q-value of one feature vector under the online weights.

    ``params`` may also be a bare weight list (e.g. ``params.target``).
    """
    w = params.weights if isinstance(params, QNetworkParams) else params
    x = np.asarray(features, dtype=float)
    if x.ndim != 1:
        raise StructuralError("q_forward takes a single feature vector")
    return float(q_values(w, x[None, :])[0])


def loss_and_grad(weights, features, target: float):
    """Squared TD error ``(Q - target)^2`` and its gradient for each weight array."""
    x = np.asarray(features, dtype=float)[None, :]
    if x.shape[1] != weights[0].shape[0]:
        raise StructuralError(f"feature length {x.shape[1]} != input size {weights[0].shape[0]}")
    q, acts = _forward(weights, x)
    err = float(q[0]) - float(target)
    grads = [None] * len(weights)
    delta = np.array([[2.0 * err]])
    n_layers = len(weights) // 2
    for k in range(n_layers - 1, -1, -1):
        grads[2 * k] = acts[k].T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        if k:
            delta = (delta @ weights[2 * k].T) * (acts[k] > 0)
    return err * err, grads


def td_update(params: QNetworkParams, features, target: float, lr: float = 1e-4,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> float:
    """One Adam step on ``(Q(features) - target)^2``, in place; returns the pre-update loss."""
    if not math.isfinite(target):
        raise TrainingDivergence(f"non-finite target {target}")
    loss, grads = loss_and_grad(params.weights, features, target)
    if not math.isfinite(loss):
        raise TrainingDivergence(f"non-finite loss {loss}")
    params.step += 1
    c1 = 1.0 - beta1 ** params.step
    c2 = 1.0 - beta2 ** params.step
    for k, g in enumerate(grads):
        params.m[k] = beta1 * params.m[k] + (1 - beta1) * g
        params.v[k] = beta2 * params.v[k] + (1 - beta2) * g * g
        params.weights[k] = params.weights[k] - lr * (params.m[k] / c1) / (
            np.sqrt(params.v[k] / c2) + eps)
    return loss


def n_step_targets(rewards: Sequence[float], bootstrap: float, gamma: float) -> list[float]:
    """Backward-accumulated returns for a buffer of rewards (oldest first).

    ``R`` starts at ``bootstrap`` and folds ``R <- r_i + gamma R`` from the
    newest reward to the oldest; the result is listed oldest first, so its
    first entry is the full n-step return.
    """
    if len(rewards) < 1:
        raise ValueError("need at least one reward")
    R = float(bootstrap)
    out = []
    for r in reversed(rewards):
        R = float(r) + gamma * R
        out.append(R)
    return out[::-1]


def n_step_target(rewards: Sequence[float], bootstrap: float, gamma: float) -> float:
    """Return of the oldest transition in the buffer."""
    return n_step_targets(rewards, bootstrap, gamma)[0]


class NStepBuffer:
    """FIFO of at most ``n`` transitions, emptied by :meth:`drain`."""

    def __init__(self, n: int):
        self.n = int(n)
        self._q: deque = deque(maxlen=self.n)

    def __len__(self) -> int:
        return len(self._q)

    def append(self, tr) -> None:
        if len(self._q) == self.n:
            raise RuntimeError("buffer full; drain before appending")
        self._q.append(tr)

    @property
    def full(self) -> bool:
        return len(self._q) == self.n

    def drain(self) -> list:
        items = list(self._q)
        self._q.clear()
        return items


def epsilon_schedule(episode: int, episodes: int, eps_range=(0.01, 1.0)) -> float:
    """Linear decay from ``eps_max`` at episode 0 to ``eps_min`` at the last episode."""
    lo, hi = eps_range
    if episodes <= 1:
        return float(hi)
    frac = episode / (episodes - 1)
    return float(hi + (lo - hi) * frac)


# ---------------------------------------------------------------------------
# acting


def feature_matrix(state: MdpState, candidates, grid: GridSpec, u_cap: int) -> np.ndarray:
    return np.array([encode_features(state, a, grid, u_cap) for a in candidates])


def select_action(target_weights, state: MdpState, candidates, eps: float,
                  rng: Optional[np.random.Generator], grid: GridSpec, u_cap: int):
    """Epsilon-greedy choice among ``candidates`` under the target network.

    Returns ``(index, action)``. Greedy ties go to the earliest candidate,
    i.e. base action first, then toggle candidates by (z, rank).
    """
    n = len(candidates)
    if n == 0:
        from .env import ContractViolation
        raise ContractViolation("empty candidate set")
    if eps > 0 and rng is not None and rng.random() < eps:
        k = int(rng.integers(n))
        return k, candidates[k]
    q = q_values(target_weights, feature_matrix(state, candidates, grid, u_cap))
    k = int(np.argmax(q))
    return k, candidates[k]


def grid_u_cap(grid: GridSpec) -> int:
    return int(max(max(u.min_up, u.min_down, u.n_stairs) for u in grid.units))


# ---------------------------------------------------------------------------
# rollouts


@dataclass
class Rollout:
    day_costs: list  # operating cost per day, zeta added on a terminal day
    terminal_days: list  # 0-based day indices that hit a terminal state
    transitions: list
    final_state: Optional[MdpState] = None

    @property
    def total(self) -> float:
        return float(sum(self.day_costs))

    @property
    def mean(self) -> float:
        return self.total / max(1, len(self.day_costs))


def greedy_rollout(env: UCEnv, weights, days: Optional[Sequence[int]] = None,
                   keep_transitions: bool = False) -> Rollout:
    """Greedy policy over consecutive days, starting from the grid's initial condition.

    The end state of one day carries into the next. A day that runs into a
    terminal state is charged ``zeta`` and the next day restarts from the
    initial condition.
    """
    grid = env.grid
    u_cap = grid_u_cap(grid)
    T = env.periods_per_day
    days = list(range(env.n_days)) if days is None else list(days)
    costs, bad, trs = [], [], []
    carry = None
    prev_day = None
    for d in days:
        if prev_day is not None and d != prev_day + 1:
            carry = None
        state = env.reset(d, carry)
        cands = env.candidates(state)
        cost = 0.0
        failed = False
        for _ in range(T):
            if cands.empty:
                failed = True
                break
            _, a = select_action(weights, state, cands, 0.0, None, grid, u_cap)
            tr = env.step(state, a)
            cost += tr.cost
            if keep_transitions:
                trs.append(tr)
            if tr.terminal:
                failed = True
                break
            state, cands = tr.next_state, tr.next_candidates
        if failed:
            cost += env.zeta
            bad.append(d)
            carry = None
        else:
            carry = state
        costs.append(cost)
        prev_day = d
    return Rollout(costs, bad, trs, carry)


# ---------------------------------------------------------------------------
# training


@dataclass
class MemberResult:
    member: int
    seed: int
    best: Optional[QNetworkParams]  # checkpoint with the lowest validation cost
    best_episode: int
    best_validation_cost: float
    final: Optional[QNetworkParams]
    log: list  # one dict per episode
    diverged: Optional[str] = None


def member_seed(base_seed: int, member: int) -> int:
    """Seed of member ``member``; depends on nothing but the two integers."""
    return int(np.random.SeedSequence([int(base_seed), int(member)]).generate_state(1)[0])


def train_member(env: UCEnv, val_env: UCEnv, config: TrainerConfig, member: int = 0,
                 seed: Optional[int] = None,
                 progress: Optional[Callable[[dict], None]] = None) -> MemberResult:
    """Train one agent over rotating days of ``env``.

    Each episode is one day. A completed day hands its final state to the
    next day; a day that hits a terminal state is replayed from the same
    start state. After every episode a greedy rollout over ``val_env``
    scores the current target network, and the best-scoring snapshot is kept.
    """
    grid = env.grid
    seed = member_seed(config.seed, member) if seed is None else int(seed)
    rng = np.random.default_rng(seed)
    k = env.loads.forecast_window
    u_cap = grid_u_cap(grid)
    sizes = (4 * grid.n_units + k + 2, *config.hidden, 1)
    params = QNetworkParams.init(sizes, rng)
    scale = float(config.reward_scale or full_output_cost(grid))
    T = env.periods_per_day
    buf = NStepBuffer(config.n_step)

    best, best_cost, best_ep = None, math.inf, -1
    log = []
    day, carry = 0, None

    def sweep(last: Transition):
        if last.terminal:
            boot = 0.0
        elif last.next_candidates.empty:
            # out of data: value the next state as if it kept its commitment
            boot = q_forward(params.target, encode_features(
                last.next_state, last.next_state.v, grid, u_cap))
        else:
            boot = float(np.max(q_values(params.target, feature_matrix(
                last.next_state, last.next_candidates, grid, u_cap))))
        items = buf.drain()
        targets = n_step_targets([tr.reward / scale for tr in items], boot, config.gamma)
        for tr, R in zip(reversed(items), reversed(targets)):
            td_update(params, encode_features(tr.state, tr.action, grid, u_cap), R, config.lr)
            if params.step % config.target_sync == 0:
                params.sync_target()

    try:
        for ep in range(config.episodes):
            eps = epsilon_schedule(ep, config.episodes, (config.eps_min, config.eps_max))
            state = env.reset(day, carry)
            cands = env.candidates(state)
            terminals = 0
            failed = cands.empty
            if failed:
                terminals += 1
            for _ in range(T if not failed else 0):
                _, a = select_action(params.target, state, cands, eps, rng, grid, u_cap)
                tr = env.step(state, a)
                buf.append(tr)
                if buf.full or tr.terminal:
                    sweep(tr)
                if tr.terminal:
                    terminals += 1
                    failed = True
                    break
                state, cands = tr.next_state, tr.next_candidates
            if not params.is_finite():
                raise TrainingDivergence("non-finite parameters")
            if failed:
                buf.drain()
            else:
                carry = state
                day = (day + 1) % env.n_days
            val = greedy_rollout(val_env, params.target)
            if val.mean < best_cost:
                best, best_cost, best_ep = params.snapshot(), val.mean, ep
            row = {"member": member, "episode": ep, "epsilon": eps,
                   "mean_validation_cost": val.mean, "updates": params.step,
                   "terminal_count": terminals}
            log.append(row)
            if progress is not None:
                progress(row)
    except TrainingDivergence as exc:
        return MemberResult(member, seed, best, best_ep, best_cost, None, log, str(exc))
    return MemberResult(member, seed, best, best_ep, best_cost, params, log)


@dataclass
class EnsembleResult:
    members: list  # MemberResult per member id

    @property
    def healthy(self) -> list:
        return [m for m in self.members if m.best is not None]


def train_ensemble(env: UCEnv, val_env: UCEnv, config: TrainerConfig,
                   progress: Optional[Callable[[dict], None]] = None) -> EnsembleResult:
    """``config.members`` independent agents with per-member seeds.

    Members run one after another; each owns its parameters, buffer and RNG,
    and candidate sets (a pure function of the state) are shared through the
    environment's cache.
    """
    out = [train_member(env, val_env, config, m, progress=progress)
           for m in range(config.members)]
    res = EnsembleResult(out)
    if not res.healthy:
        raise TrainingDivergence("every ensemble member diverged")
    return res


def best_member(costs: Sequence[float]) -> int:
    """Index of the lowest cost; ties go to the lowest index."""
    return int(np.argmin(np.asarray(costs, dtype=float)))


# ---------------------------------------------------------------------------
# persistence

LOG_FIELDS = ["member", "episode", "epsilon", "mean_validation_cost", "updates",
              "terminal_count"]


def write_training_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(r[k])) if k in ("epsilon", "mean_validation_cost")
                            else r[k]) for k in LOG_FIELDS})


def _zip_add(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_DEFLATED
    zf.writestr(info, data)


def save_checkpoint(path, params: QNetworkParams, fingerprint: str = "",
                    extra: Optional[dict] = None) -> None:
    """Write an ``.npz``-compatible archive with fixed timestamps (byte-reproducible)."""
    meta = {"version": CHECKPOINT_VERSION, "sizes": list(params.sizes), "step": params.step,
            "fingerprint": fingerprint, "extra": extra or {}}
    with zipfile.ZipFile(path, "w") as zf:
        for name, arr in params.arrays().items():
            bio = io.BytesIO()
            np.lib.format.write_array(bio, np.ascontiguousarray(arr), allow_pickle=False)
            _zip_add(zf, name + ".npy", bio.getvalue())
        _zip_add(zf, "meta.json", json.dumps(meta, sort_keys=True).encode())


def load_checkpoint(path) -> tuple[QNetworkParams, dict]:
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise StructuralError(f"unsupported checkpoint version {meta.get('version')}")
        n = 2 * (len(meta["sizes"]) - 1)

        def group(tag):
            return [np.lib.format.read_array(io.BytesIO(zf.read(f"{tag}{k}.npy")))
                    for k in range(n)]

        params = QNetworkParams(meta["sizes"], group("w"), group("t"), group("m"), group("v"),
                                meta["step"])
    return params, meta
