"""Prioritized experience replay: sum tree plus ring-buffer transition store.

Leaf masses hold priority**alpha so sampling probability is
p_i**alpha / sum_j p_j**alpha, drawn by stratified mass sampling. Importance
weights are (N * P(i))**-beta normalized by the batch maximum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

PRIORITY_FLOOR = 1e-3
ALPHA_PR = 0.6


@dataclass
class Transition:
    """One (s, a, r, s') interaction record; tasks are continuing, so there
    is no terminal flag."""

    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray


@dataclass
class SampleBatch:
    states: np.ndarray       # (k, F)
    actions: np.ndarray      # (k,)
    rewards: np.ndarray      # (k,)
    next_states: np.ndarray  # (k, F)
    weights: np.ndarray      # (k,) importance weights, max-normalized
    leaf_ids: np.ndarray     # (k,) buffer slots, for priority updates

    def __len__(self) -> int:
        return len(self.actions)


class SumTree:
    """Binary indexed tree over leaf masses with O(log n) update and
    proportional sampling. Capacity is padded to a power of two internally;
    phantom leaves carry zero mass and are never drawn."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._n = 1
        while self._n < capacity:
            self._n *= 2
        self._depth = self._n.bit_length() - 1
        self.tree = np.zeros(2 * self._n)

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def leaf_values(self) -> np.ndarray:
        return self.tree[self._n : self._n + self.capacity]

    def set(self, leaf_ids, values) -> None:
        """Assign masses to leaves and repair all ancestor sums."""
        ids = np.asarray(leaf_ids, dtype=np.int64) + self._n
        tree = self.tree
        if ids.size == 1:
            node = int(ids[0])
            tree[node] = values[0] if np.ndim(values) else values
            node //= 2
            while node >= 1:
                tree[node] = tree[2 * node] + tree[2 * node + 1]
                node //= 2
            return
        tree[ids] = values
        nodes = ids
        for _ in range(self._depth):  # duplicate nodes recompute idempotently
            nodes = nodes // 2
            tree[nodes] = tree[2 * nodes] + tree[2 * nodes + 1]

    def find(self, mass: np.ndarray) -> np.ndarray:
        """Leaf ids whose cumulative-mass interval contains each query."""
        mass = np.array(mass, dtype=np.float64)
        idx = np.ones(len(mass), dtype=np.int64)
        for _ in range(self._depth):
            left = 2 * idx
            left_mass = self.tree[left]
            go_right = mass >= left_mass
            mass = np.where(go_right, mass - left_mass, mass)
            idx = np.where(go_right, left + 1, left)
        return idx - self._n

    def validate(self, atol: float = 1e-9) -> bool:
        """Debug check: every internal node equals the sum of its children."""
        internal = self.tree[1 : self._n]
        children = self.tree[2 : 2 * self._n].reshape(-1, 2).sum(axis=1)
        return bool(np.allclose(internal, children, rtol=0, atol=atol))


class ReplayBuffer:
    """Ring buffer of transitions with prioritized (or uniform) sampling.

    New transitions enter at the running max priority (1.0 while empty) so
    they are replayed at least once before their priority is corrected.
    """

    def __init__(self, capacity: int = 200_000, state_dim: int = 1,
                 alpha: float = ALPHA_PR, prioritized: bool = True,
                 dtype=np.float64):
        self.capacity = capacity
        self.state_dim = state_dim
        self.alpha = alpha
        self.prioritized = prioritized
        self.tree = SumTree(capacity)
        self.states = np.zeros((capacity, state_dim), dtype=dtype)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim), dtype=dtype)
        self.size = 0
        self.head = 0
        self.max_priority = 1.0

    def __len__(self) -> int:
        return self.size

    def store(self, tr: Transition) -> int:
        """Insert at the running-max priority; overwrite oldest when full."""
        slot = self.head
        self.states[slot] = tr.state
        self.actions[slot] = tr.action
        self.rewards[slot] = tr.reward
        self.next_states[slot] = tr.next_state
        self.tree.set([slot], [self.max_priority ** self.alpha])
        self.head = (self.head + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return slot

    def sample(self, k: int, beta: float, rng: np.random.Generator) -> SampleBatch:
        """Stratified proportional sample of k transitions with importance
        weights; uniform sampling when the buffer is non-prioritized."""
        if self.size < k:
            raise ValueError(f"buffer holds {self.size} transitions, need {k}")
        if self.prioritized:
            total = self.tree.total
            strata = (np.arange(k) + rng.random(k)) * (total / k)
            leaf_ids = self.tree.find(strata)
            mass = self.tree.leaf_values()[leaf_ids]
            probs = mass / total
            weights = (self.size * probs) ** (-beta)
            weights = weights / weights.max()
        else:
            leaf_ids = rng.integers(0, self.size, size=k)
            weights = np.ones(k)
        return SampleBatch(
            states=self.states[leaf_ids],
            actions=self.actions[leaf_ids],
            rewards=self.rewards[leaf_ids],
            next_states=self.next_states[leaf_ids],
            weights=weights,
            leaf_ids=leaf_ids,
        )

    def update_priorities(self, leaf_ids: np.ndarray, td_errors: np.ndarray) -> None:
        """Set priorities to |TD| + floor for the given slots."""
        priorities = np.abs(np.asarray(td_errors, dtype=np.float64)) + PRIORITY_FLOOR
        self.tree.set(leaf_ids, priorities ** self.alpha)
        self.max_priority = max(self.max_priority, float(priorities.max()))

    def state_arrays(self) -> dict:
        """Checkpoint payload (transition columns, priorities, counters)."""
        return {
            "states": self.states[: self.size].copy(),
            "actions": self.actions[: self.size].copy(),
            "rewards": self.rewards[: self.size].copy(),
            "next_states": self.next_states[: self.size].copy(),
            "masses": self.tree.leaf_values()[: self.size].copy(),
            "counters": np.array([self.size, self.head, self.max_priority]),
        }

    def load_state(self, arrays: dict) -> None:
        n = int(arrays["counters"][0])
        self.states[:n] = arrays["states"]
        self.actions[:n] = arrays["actions"]
        self.rewards[:n] = arrays["rewards"]
        self.next_states[:n] = arrays["next_states"]
        self.tree.set(np.arange(n), arrays["masses"])
        self.size = n
        self.head = int(arrays["counters"][1])
        self.max_priority = float(arrays["counters"][2])
