"""The window-sizing DQN agent.

Couples the Q-network pair (online + periodically hard-copied target), the
prioritized replay buffer and the epsilon/learning-rate/beta schedules into
one per-tick training loop driven by the episode runner.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .nn import Adam, QNetwork
from .replay import PRIORITY_FLOOR, ReplayBuffer, SampleBatch, Transition

#: window sizes available to the agent (10 actions)
DEFAULT_ACTIONS = (20, 40, 60, 80, 100, 120, 140, 160, 180, 200)
#: smaller 8-action variant, selectable by config
COMPACT_ACTIONS = (20, 40, 60, 80, 100, 120, 140, 160)

WARMUP_WINDOW = 50


class TrainingDiverged(RuntimeError):
    """Raised when the TD loss stops being finite."""


def validate_actions(actions) -> tuple:
    actions = tuple(int(a) for a in actions)
    if not actions:
        raise ValueError("action set must be nonempty")
    if any(a <= 0 for a in actions):
        raise ValueError(f"window sizes must be positive: {actions}")
    if any(b <= a for a, b in zip(actions, actions[1:])):
        raise ValueError(f"window sizes must be strictly increasing: {actions}")
    return actions


@dataclass(frozen=True)
class RewardWeights:
    """Composite reward coefficients: r = accuracy*u - cost*c - stability*|dw|."""

    accuracy: float = 1.0
    cost: float = 0.01
    stability: float = 0.005


def compute_reward(
    cost_ms: float,
    w: int,
    w_prev: int,
    weights: RewardWeights,
    correct: Optional[bool] = None,
    logloss: Optional[float] = None,
) -> float:
    """Reward for one tick, in binary (correct) or continuous (logloss) mode.

    Binary mode scores u = 1/0; continuous mode scores u = -logloss clamped
    to [-5, 0].
    """
    if (correct is None) == (logloss is None):
        raise ValueError("pass exactly one of correct= or logloss=")
    if correct is not None:
        u = 1.0 if correct else 0.0
    else:
        u = -min(max(float(logloss), 0.0), 5.0)
    return weights.accuracy * u - weights.cost * cost_ms - weights.stability * abs(w - w_prev)


@dataclass(frozen=True)
class Schedules:
    """Exploration, importance-sampling and sync schedules."""

    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 50_000
    beta_start: float = 0.4
    beta_end: float = 1.0
    sync_interval: int = 2_000
    batch_size: int = 128
    gamma: float = 0.99

    def epsilon(self, t: int) -> float:
        """Linear 1.0 -> 0.05 over eps_decay_steps, flat afterwards."""
        if t >= self.eps_decay_steps:
            return self.eps_end
        return self.eps_start + (self.eps_end - self.eps_start) * t / self.eps_decay_steps

    def beta(self, t: int, total_steps: int) -> float:
        """Importance-weight exponent annealed linearly over the run."""
        if total_steps <= 0:
            return self.beta_end
        frac = min(1.0, t / total_steps)
        return self.beta_start + (self.beta_end - self.beta_start) * frac


@dataclass(frozen=True)
class AgentConfig:
    """Everything that defines an RL window agent.

    The defaults are the experiment-scale settings (200k buffer, batch 128,
    sync every 2000); :meth:`compact` is the smaller preset (100k/64/1000).
    """

    actions: tuple = DEFAULT_ACTIONS
    state: str = "full"              # "full" or "reduced" (variance+rate only)
    include_spectral: bool = True
    dueling: bool = True
    double: bool = True
    prioritized: bool = True
    noisy: bool = False
    batchnorm: bool = False
    widths: tuple = (256, 128, 64)
    net_dtype: str = "float32"  # float64 costs ~2x and adds nothing for RL
    buffer_capacity: int = 200_000
    batch_size: int = 128
    sync_interval: int = 2_000
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 50_000
    alpha_pr: float = 0.6
    beta_start: float = 0.4
    beta_end: float = 1.0
    lr_base: float = 1e-3
    lr_floor: float = 1e-4
    lr_decay_steps: int = 50_000
    total_steps: int = 0             # beta anneal horizon; runner sets it from the stream
    retrain_period: Optional[int] = None  # if set, burst-train instead of per-tick updates
    retrain_batches: int = 1_000

    def __post_init__(self):
        object.__setattr__(self, "actions", validate_actions(self.actions))
        object.__setattr__(self, "widths", tuple(self.widths))
        if self.state not in ("full", "reduced"):
            raise ValueError(f"state must be 'full' or 'reduced', got {self.state!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.buffer_capacity < self.batch_size:
            raise ValueError("buffer_capacity must be >= batch_size")
        if self.sync_interval < 1:
            raise ValueError("sync_interval must be >= 1")

    @classmethod
    def compact(cls, **overrides) -> "AgentConfig":
        base = dict(buffer_capacity=100_000, batch_size=64, sync_interval=1_000)
        base.update(overrides)
        return cls(**base)

    def schedules(self) -> Schedules:
        return Schedules(
            eps_start=self.eps_start, eps_end=self.eps_end,
            eps_decay_steps=self.eps_decay_steps,
            beta_start=self.beta_start, beta_end=self.beta_end,
            sync_interval=self.sync_interval, batch_size=self.batch_size,
            gamma=self.gamma,
        )


class DQNAgent:
    """Double/dueling DQN over the discrete window-size action set."""

    def __init__(self, state_dim: int, config: AgentConfig, seed: int = 0):
        self.config = config
        self.actions = config.actions
        self.n_actions = len(config.actions)
        self.state_dim = state_dim
        self.sched = config.schedules()
        ss = np.random.SeedSequence(seed)
        net_seed, explore_seed = ss.spawn(2)
        self.rng = np.random.default_rng(explore_seed)
        dtype = np.dtype(config.net_dtype)
        self.online = QNetwork(
            state_dim, self.n_actions, config.widths,
            dueling=config.dueling, batchnorm=config.batchnorm, noisy=config.noisy,
            seed=int(net_seed.generate_state(1)[0]), dtype=dtype,
        )
        self.target = self.online.clone()
        self.opt = Adam(self.online, base_lr=config.lr_base, floor_lr=config.lr_floor,
                        decay_steps=config.lr_decay_steps)
        self.buffer = ReplayBuffer(
            capacity=config.buffer_capacity, state_dim=state_dim,
            alpha=config.alpha_pr, prioritized=config.prioritized, dtype=dtype,
        )
        self.train_steps = 0

    # -- policy ---------------------------------------------------------------

    def epsilon(self, t: int) -> float:
        return self.sched.epsilon(t)

    def greedy_action(self, state: np.ndarray) -> int:
        if self.config.noisy:
            self.online.resample_noise(self.rng)
            q = self.online.forward(state, train=False, use_noise=True)
        else:
            q = self.online.forward(state, train=False)
        return int(np.argmax(q))  # ties break toward the lowest index

    def select_action(self, state: np.ndarray, t: int) -> int:
        """Epsilon-greedy over the action set; draw order is (coin, choice)."""
        if self.rng.random() < self.epsilon(t):
            return int(self.rng.integers(self.n_actions))
        return self.greedy_action(state)

    # -- learning -------------------------------------------------------------

    def store(self, tr: Transition) -> int:
        return self.buffer.store(tr)

    def td_targets(self, batch: SampleBatch) -> np.ndarray:
        """y = r + gamma * Q_target(s', argmax_a Q_online(s', a)) (Double DQN),
        or the plain max over Q_target when double is disabled. Streams are
        continuing tasks: no terminal masking."""
        q_target = self.target.forward(batch.next_states, train=False)
        if self.config.double:
            q_online = self.online.forward(batch.next_states, train=False)
            best = np.argmax(q_online, axis=1)
        else:
            best = np.argmax(q_target, axis=1)
        bootstrap = q_target[np.arange(len(batch)), best]
        return batch.rewards + self.sched.gamma * bootstrap

    def train_step(self, t: int) -> Optional[np.ndarray]:
        """One prioritized minibatch update; returns TD errors or None when
        the buffer is still smaller than the batch size."""
        k = self.config.batch_size
        if len(self.buffer) < k:
            return None
        beta = self.sched.beta(t, self.config.total_steps)
        batch = self.buffer.sample(k, beta, self.rng)
        y = self.td_targets(batch)
        if self.config.noisy:
            self.online.resample_noise(self.rng)
        q = self.online.forward(batch.states, train=True,
                                use_noise=self.config.noisy or None)
        rows = np.arange(k)
        q_taken = q[rows, batch.actions]
        td = y - q_taken
        loss = float(np.mean(batch.weights * td * td))
        if not np.isfinite(loss):
            raise TrainingDiverged(
                f"non-finite TD loss at train step {self.train_steps} (t={t}): "
                f"|td|_max={np.max(np.abs(td))!r}"
            )
        dq = np.zeros_like(q)
        dq[rows, batch.actions] = 2.0 * batch.weights * (q_taken - y) / k
        self.online.backward(dq)
        self.opt.step(self.online)
        self.buffer.update_priorities(batch.leaf_ids, td)
        self.train_steps += 1
        if self.train_steps % self.sched.sync_interval == 0:
            self.sync_target()
        return td

    def sync_target(self) -> None:
        self.target.copy_from(self.online)

    # -- checkpointing ----------------------------------------------------------

    def save(self, path) -> None:
        arrays = {}
        for prefix, net in (("online", self.online), ("target", self.target)):
            for key, arr in net.state_arrays().items():
                arrays[f"{prefix}/{key}"] = arr
        for key, arr in self.opt.state_arrays().items():
            arrays[f"opt/{key}"] = arr
        for key, arr in self.buffer.state_arrays().items():
            arrays[f"buffer/{key}"] = arr
        meta = {"train_steps": self.train_steps, "opt_t": self.opt.t,
                "net": self.online.config()}
        arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        np.savez(path, **arrays)

    def load(self, path) -> None:
        with np.load(path) as data:
            meta = json.loads(bytes(data["__meta__"]).decode())
            self.train_steps = meta["train_steps"]
            for prefix, net in (("online", self.online), ("target", self.target)):
                for key, arr in net.parameters():
                    arr[...] = data[f"{prefix}/param/{key}"]
                for i, norm in enumerate(net.norms):
                    if norm is not None:
                        norm.running_mean[...] = data[f"{prefix}/state/norm{i}.running_mean"]
                        norm.running_var[...] = data[f"{prefix}/state/norm{i}.running_var"]
            self.opt.load_state(
                {k.removeprefix("opt/"): data[k] for k in data.files if k.startswith("opt/")},
                meta["opt_t"],
            )
            self.buffer.load_state(
                {k.removeprefix("buffer/"): data[k] for k in data.files if k.startswith("buffer/")}
            )
