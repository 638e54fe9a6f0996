"""Comparison window policies: fixed size, ADWIN-driven, reduced-state DQN.

The ADWIN detector keeps an exponential histogram (rows of up to M buckets,
bucket counts doubling per row) and cuts the oldest buckets whenever two
sub-windows have statistically distinguishable means:

    |mean_0 - mean_1| >= sqrt( ln(4 n / delta) / (2 m_h) )

with m_h = 1 / (1/n_0 + 1/n_1), the cited algorithm's harmonic-mean term.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .agent import AgentConfig

MAX_BUCKETS_PER_ROW = 5


@dataclass
class Bucket:
    total: float
    count: int


class AdwinDetector:
    """Adaptive-window change detector over a single real-valued signal."""

    def __init__(self, delta: float = 0.002, max_buckets: int = MAX_BUCKETS_PER_ROW):
        if not 0.0 < delta < 1.0:
            raise ValueError(f"delta must be in (0, 1), got {delta}")
        self.delta = delta
        self.max_buckets = max_buckets
        # rows[i] holds buckets of count 2**i, oldest first; higher rows are older
        self.rows: list = [[]]
        self.total_sum = 0.0
        self.total_count = 0
        self.n_cuts = 0

    # -- bookkeeping -----------------------------------------------------------

    @property
    def width(self) -> int:
        """Current adaptive-window length."""
        return self.total_count

    @property
    def mean(self) -> float:
        return self.total_sum / self.total_count if self.total_count else 0.0

    def bucket_count(self) -> int:
        return sum(len(row) for row in self.rows)

    def buckets_oldest_first(self) -> list:
        out = []
        for i in range(len(self.rows) - 1, -1, -1):
            out.extend(self.rows[i])
        return out

    def aggregate(self):
        """(sum, count) over all buckets, for integrity checks."""
        total = 0.0
        count = 0
        for row in self.rows:
            for b in row:
                total += b.total
                count += b.count
        return total, count

    # -- core update -------------------------------------------------------------

    def _insert(self, value: float) -> None:
        self.rows[0].append(Bucket(value, 1))
        self.total_sum += value
        self.total_count += 1
        i = 0
        while len(self.rows[i]) > self.max_buckets:
            if i + 1 == len(self.rows):
                self.rows.append([])
            a = self.rows[i].pop(0)
            b = self.rows[i].pop(0)
            self.rows[i + 1].append(Bucket(a.total + b.total, a.count + b.count))
            i += 1

    def _drop_oldest_bucket(self) -> None:
        for i in range(len(self.rows) - 1, -1, -1):
            if self.rows[i]:
                b = self.rows[i].pop(0)
                self.total_sum -= b.total
                self.total_count -= b.count
                break
        while len(self.rows) > 1 and not self.rows[-1]:
            self.rows.pop()

    def _any_cut(self) -> bool:
        """True if some oldest-first split has distinguishable means."""
        n = self.total_count
        if n < 2:
            return False
        buckets = self.buckets_oldest_first()
        if len(buckets) < 2:
            return False
        counts = np.array([b.count for b in buckets], dtype=np.float64)
        sums = np.array([b.total for b in buckets])
        n0 = np.cumsum(counts)[:-1]
        u0 = np.cumsum(sums)[:-1]
        n1 = n - n0
        u1 = self.total_sum - u0
        diff_sq = (u0 / n0 - u1 / n1) ** 2
        harmonic = n0 * n1 / (n0 + n1)
        eps_sq = math.log(4.0 * n / self.delta) / (2.0 * harmonic)
        return bool(np.any(diff_sq >= eps_sq))

    def update(self, value: float):
        """Insert one value; returns (drift detected, retained window length)."""
        if not math.isfinite(value):
            raise ValueError(f"ADWIN input must be finite, got {value!r}")
        self._insert(value)
        dropped = False
        while self._any_cut():
            self._drop_oldest_bucket()
            dropped = True
            self.n_cuts += 1
        return dropped, self.total_count


def adwin_update(det: AdwinDetector, value: float):
    """Functional alias for ``det.update(value)``."""
    return det.update(value)


def snap_to_actions(w: int, actions: Sequence[int]) -> int:
    """Clamp to [min, max] of the action set, then snap to the nearest
    member (ties toward the smaller size)."""
    w = min(max(w, actions[0]), actions[-1])
    i = bisect_left(actions, w)
    if i < len(actions) and actions[i] == w:
        return actions[i]
    lo, hi = actions[i - 1], actions[i]
    return lo if (w - lo) <= (hi - w) else hi


class FixedWindowPolicy:
    """Constant window size (default 100)."""

    state_mode = None

    def __init__(self, w: int = 100):
        if w <= 0:
            raise ValueError(f"fixed window must be positive, got {w}")
        self.w = w
        self.name = f"fixed-{w}"

    def begin(self, d: int, total_ticks: int, seed: int) -> None:
        pass

    def observe(self, event) -> None:
        pass

    def choose(self, t: int, state: Optional[np.ndarray]) -> int:
        return self.w

    def feedback(self, reward: float) -> None:
        pass


class AdwinWindowPolicy:
    """One detector per dimension; the policy window is the smallest
    per-dimension ADWIN length, clamped and snapped onto the action set."""

    state_mode = None
    name = "adwin"

    def __init__(self, actions: Sequence[int], delta: float = 0.002):
        self.actions = tuple(actions)
        self.delta = delta
        self.detectors: list = []

    def begin(self, d: int, total_ticks: int, seed: int) -> None:
        self.detectors = [AdwinDetector(self.delta) for _ in range(d)]

    def observe(self, event) -> None:
        for det, value in zip(self.detectors, event.values):
            det.update(float(value))

    def window_length(self) -> int:
        return min(det.width for det in self.detectors)

    def choose(self, t: int, state: Optional[np.ndarray]) -> int:
        return snap_to_actions(self.window_length(), self.actions)

    def feedback(self, reward: float) -> None:
        pass


def streamx_config(**overrides) -> AgentConfig:
    """Reduced-state baseline agent: variance and rate-of-change state only,
    plain (non-dueling) head, plain-max targets, uniform replay."""
    base = dict(state="reduced", dueling=False, double=False,
                prioritized=False, noisy=False)
    base.update(overrides)
    return AgentConfig(**base)
