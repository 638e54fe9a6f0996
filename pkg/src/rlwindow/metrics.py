"""Run metrics, the per-tick log, and drift-aware evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

DRIFT_EVAL_TICKS = 2_000   # accuracy window on each side of a drift event
DRIFT_EVAL_SKIP = 100      # post-drift ticks ignored so the metric measures recovery


@dataclass
class TickLog:
    """Columnar per-tick record; the source of truth for every metric."""

    tick: list = field(default_factory=list)
    timestamp: list = field(default_factory=list)
    window: list = field(default_factory=list)
    correct: list = field(default_factory=list)    # 1/0, -1 when unlabeled
    logloss: list = field(default_factory=list)    # nan when unlabeled
    reward: list = field(default_factory=list)
    cost_ms: list = field(default_factory=list)
    latency_ms: list = field(default_factory=list)
    epsilon: list = field(default_factory=list)    # nan for non-RL policies
    mean_abs_td: list = field(default_factory=list)  # nan when no train step ran

    def append(self, **kv) -> None:
        for key, value in kv.items():
            getattr(self, key).append(value)

    def __len__(self) -> int:
        return len(self.tick)

    COLUMNS = ("tick", "timestamp", "window", "correct", "logloss", "reward",
               "cost_ms", "latency_ms", "epsilon", "mean_abs_td")

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for i in range(len(self)):
                writer.writerow([_cell(getattr(self, c)[i]) for c in self.COLUMNS])


def _cell(v) -> str:
    if isinstance(v, float):
        return "nan" if np.isnan(v) else repr(v)
    return str(v)


@dataclass
class RunMetrics:
    """Accumulated statistics for one seeded run.

    ``drift_robustness`` is post-drift accuracy minus pre-drift accuracy
    (negative = drop), or None when the run had no drift events.
    """

    n_ticks: int = 0
    n_labeled: int = 0
    accuracy: float = 0.0
    avg_window: float = 0.0
    compute_cost_ms: float = 0.0
    stability: float = 0.0
    latency_ms: float = 0.0
    drift_robustness: Optional[float] = None
    series: list = field(default_factory=list)  # per-interval snapshot dicts

    HEADLINE = ("accuracy", "avg_window", "compute_cost_ms",
                "drift_robustness", "stability", "latency_ms")

    def write_csv(self, path) -> None:
        """One row per evaluation interval plus a final overall row."""
        cols = ["segment", "start_tick", "end_tick", "accuracy", "avg_window",
                "compute_cost_ms", "stability", "latency_ms", "drift_robustness"]
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for snap in self.series:
                writer.writerow([
                    snap["segment"], snap["start_tick"], snap["end_tick"],
                    _fmt(snap["accuracy"]), _fmt(snap["avg_window"]),
                    _fmt(snap["compute_cost_ms"]), _fmt(snap["stability"]),
                    _fmt(snap["latency_ms"]), "n/a",
                ])
            writer.writerow([
                "overall", 0, self.n_ticks,
                _fmt(self.accuracy), _fmt(self.avg_window),
                _fmt(self.compute_cost_ms), _fmt(self.stability),
                _fmt(self.latency_ms),
                "n/a" if self.drift_robustness is None else _fmt(self.drift_robustness),
            ])


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def drift_split_metrics(
    correct: Sequence[int],
    drift_ticks: Sequence[int],
    k: int = DRIFT_EVAL_TICKS,
    skip: int = DRIFT_EVAL_SKIP,
) -> Optional[float]:
    """Mean over drift events of (post-drift - pre-drift) accuracy.

    Pre spans the k ticks before each drift tick; post spans the k ticks
    after skipping the first ``skip`` post-drift ticks. Unlabeled ticks
    (correct == -1) are excluded. Returns None when there are no drift
    events with labeled data on both sides.
    """
    correct = np.asarray(correct)
    deltas = []
    for tau in drift_ticks:
        pre = correct[max(0, tau - k):tau]
        post = correct[tau + skip:tau + skip + k]
        pre = pre[pre >= 0]
        post = post[post >= 0]
        if len(pre) == 0 or len(post) == 0:
            continue
        deltas.append(post.mean() - pre.mean())
    if not deltas:
        return None
    return float(np.mean(deltas))


def metrics_from_log(
    log: TickLog,
    drift_ticks: Sequence[int] = (),
    eval_interval: int = 10_000,
) -> RunMetrics:
    """Compute RunMetrics from a tick log (also usable on a re-parsed CSV)."""
    n = len(log)
    if n == 0:
        return RunMetrics()
    window = np.asarray(log.window, dtype=np.float64)
    correct = np.asarray(log.correct)
    cost = np.asarray(log.cost_ms, dtype=np.float64)
    latency = np.asarray(log.latency_ms, dtype=np.float64)
    labeled = correct >= 0

    def segment(lo: int, hi: int) -> dict:
        lab = labeled[lo:hi]
        seg_correct = correct[lo:hi][lab]
        w = window[lo:hi]
        jumps = np.abs(np.diff(window[max(lo, 1) - 1:hi])) if hi - lo > 0 else np.array([])
        return {
            "start_tick": lo,
            "end_tick": hi,
            "accuracy": float(seg_correct.mean()) if len(seg_correct) else 0.0,
            "avg_window": float(w.mean()),
            "compute_cost_ms": float(cost[lo:hi].mean()),
            "stability": float(jumps.mean()) if len(jumps) else 0.0,
            "latency_ms": float(latency[lo:hi].mean()),
        }

    series = []
    for i, lo in enumerate(range(0, n, eval_interval)):
        hi = min(lo + eval_interval, n)
        snap = segment(lo, hi)
        snap["segment"] = f"interval_{i + 1}"
        series.append(snap)

    overall = segment(0, n)
    jumps = np.abs(np.diff(window))
    return RunMetrics(
        n_ticks=n,
        n_labeled=int(labeled.sum()),
        accuracy=overall["accuracy"],
        avg_window=overall["avg_window"],
        compute_cost_ms=overall["compute_cost_ms"],
        stability=float(jumps.mean()) if len(jumps) else 0.0,
        latency_ms=overall["latency_ms"],
        drift_robustness=drift_split_metrics(correct, drift_ticks),
        series=series,
    )
