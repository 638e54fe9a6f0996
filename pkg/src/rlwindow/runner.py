"""Per-tick episode loop shared by every window policy.

Each released event is one tick: push into the feature window, build and
normalize the state (for learning policies), pick a window size, classify
the last w events prequentially (predict, then learn), score the composite
reward, and let the policy learn from it. The RL policy completes the
previous tick's transition once the next state is observed, then trains.

Determinism: all randomness derives from the run seed via three spawned
generators (agent/net, episode exploration+replay, classifier retrain), and
the per-tick draw order is fixed: replay-sample draws (if a train step runs)
precede the epsilon coin, which precedes the optional uniform action draw.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .agent import AgentConfig, DQNAgent, RewardWeights, Transition, WARMUP_WINDOW, compute_reward
from .classifier import SoftmaxClassifier, WindowSummary, summarize
from .features import (FeatureNormalizer, FeatureWindow, build_state,
                       build_streamx_state, state_length, streamx_state_length)
from .metrics import RunMetrics, TickLog, metrics_from_log
from .stream import ReorderBuffer, StreamError, StreamEvent


class RLWindowPolicy:
    """Adapter that drives a DQNAgent as a window policy.

    ``state_mode`` is "full" (all features) or "reduced" (variance + rate
    only, the simpler-baseline state).
    """

    def __init__(self, config: AgentConfig, name: str = "rl-window"):
        self.config = config
        self.name = name
        self.state_mode = config.state
        self.include_spectral = config.include_spectral
        self.agent: Optional[DQNAgent] = None
        self._pending = None  # (state, action index, reward) awaiting next state
        self._held = None     # (state, action index) of the current tick
        self.last_epsilon = float("nan")
        self.last_mean_abs_td = float("nan")

    def state_dim(self, d: int) -> int:
        if self.state_mode == "reduced":
            return streamx_state_length(d)
        n = state_length(d)
        return n if self.include_spectral else n - d

    def begin(self, d: int, total_ticks: int, seed: int) -> None:
        config = self.config
        if config.total_steps <= 0:
            config = replace(config, total_steps=total_ticks)
        self.agent = DQNAgent(self.state_dim(d), config, seed=seed)
        self._pending = None
        self._held = None

    def observe(self, event: StreamEvent) -> None:
        pass

    def choose(self, t: int, state: np.ndarray) -> int:
        agent = self.agent
        self.last_mean_abs_td = float("nan")
        if self._pending is not None:
            s_prev, a_prev, r_prev = self._pending
            agent.store(Transition(s_prev, a_prev, r_prev, state))
            self._pending = None
            td = agent.train_step(t)
            if td is not None:
                self.last_mean_abs_td = float(np.mean(np.abs(td)))
        self.last_epsilon = agent.epsilon(t)
        action = agent.select_action(state, t)
        self._held = (state, action)
        return agent.actions[action]

    def feedback(self, reward: float) -> None:
        if self._held is not None:
            state, action = self._held
            self._pending = (state, action, reward)
            self._held = None


@dataclass
class EpisodeConfig:
    """Runner-level knobs; see the harness config schema for provenance."""

    m: int = 200
    horizon: int = 10
    reward: RewardWeights = dc_field(default_factory=RewardWeights)
    reward_mode: str = "binary"          # "binary" | "logloss"
    cost_mode: str = "proxy"             # "proxy" (w/100 ms, deterministic) | "measured"
    retrain_interval: int = 5_000
    retrain_window: int = 10_000
    retrain_epochs: int = 3
    classifier_lr: float = 0.01
    eval_interval: int = 10_000
    drift_ticks: tuple = ()
    state_dump_path: Optional[str] = None


class _Columns:
    """Growable row store for per-tick vectors."""

    def __init__(self, width: int):
        self._buf = np.empty((4096, width)) if width else np.empty((4096,))
        self.n = 0

    def append(self, row) -> None:
        if self.n == len(self._buf):
            self._buf = np.concatenate([self._buf, np.empty_like(self._buf)])
        self._buf[self.n] = row
        self.n += 1

    def last(self, k: int) -> np.ndarray:
        return self._buf[max(0, self.n - k):self.n]


def run_episode(
    events: Iterable[StreamEvent],
    policy,
    d: int,
    n_classes: int,
    cfg: EpisodeConfig,
    seed: int = 0,
) -> tuple:
    """Drive one policy over one stream; returns (RunMetrics, TickLog).

    Learning policies are held at the default window (50) until the feature
    window has m events. A zero-length stream yields empty metrics.
    """
    ss = np.random.SeedSequence(seed)
    policy_seed, clf_seed = ss.spawn(2)
    clf_rng = np.random.default_rng(clf_seed)

    events = list(events) if not isinstance(events, (list, tuple)) else events
    policy.begin(d, len(events), int(policy_seed.generate_state(1)[0]))

    window = FeatureWindow(d, cfg.m)
    buffer = ReorderBuffer(cfg.horizon)
    classifier = SoftmaxClassifier(d, n_classes, lr=cfg.classifier_lr)
    values = _Columns(d)
    summary_feats = _Columns(2 * d)
    labels: list = []
    log = TickLog()

    dump_fh = dump_writer = None
    if cfg.state_dump_path is not None:
        dump_fh = Path(cfg.state_dump_path).open("w", newline="")
        dump_writer = csv.writer(dump_fh)

    needs_state = policy.state_mode is not None
    normalizer = None
    if needs_state:
        normalizer = FeatureNormalizer(policy.state_dim(d))

    t = 0
    w_prev = WARMUP_WINDOW if needs_state else None
    measured = cfg.cost_mode == "measured"

    def process(event: StreamEvent) -> None:
        nonlocal t, w_prev
        tick_start = time.perf_counter() if measured else 0.0
        if event.dim != d:
            raise StreamError(f"event at t={event.timestamp} has dim {event.dim}, expected {d}")
        if event.label is not None and event.label >= n_classes:
            raise StreamError(
                f"event at t={event.timestamp} has label {event.label} >= {n_classes}"
            )
        window.push(event)
        values.append(event.values)
        labels.append(-1 if event.label is None else event.label)
        policy.observe(event)

        state = None
        if needs_state:
            if policy.state_mode == "reduced":
                raw = build_streamx_state(window)
            else:
                raw = build_state(window, buffer, include_spectral=policy.include_spectral)
            if dump_writer is not None:
                dump_writer.writerow([t] + [repr(float(x)) for x in raw])
            state = normalizer.normalize(raw)

        if needs_state and not window.full:
            w = WARMUP_WINDOW
        else:
            w = policy.choose(t, state)

        summary = summarize(values.last(w))
        summary_feats.append(np.concatenate([summary.means, summary.stds]))
        label = event.label
        pred, _, logloss = classifier.predict(summary, label)
        correct = -1 if label is None else int(pred == label)

        if measured:
            cost_ms = (time.perf_counter() - tick_start) * 1e3
        else:
            cost_ms = w / 100.0

        prev = w if w_prev is None else w_prev
        if cfg.reward_mode == "logloss":
            reward = compute_reward(cost_ms, w, prev, cfg.reward,
                                    logloss=0.0 if logloss is None else logloss)
        else:
            reward = compute_reward(cost_ms, w, prev, cfg.reward, correct=bool(correct == 1))
        policy.feedback(reward)

        if label is not None:
            classifier.update(summary, label)  # prequential: predict, then learn

        if (t + 1) % cfg.retrain_interval == 0:
            _retrain(classifier, summary_feats, labels, d, cfg, clf_rng)

        latency_ms = (time.perf_counter() - tick_start) * 1e3 if measured else cost_ms
        log.append(
            tick=t, timestamp=event.timestamp, window=w,
            correct=correct,
            logloss=float("nan") if logloss is None else logloss,
            reward=reward, cost_ms=cost_ms, latency_ms=latency_ms,
            epsilon=getattr(policy, "last_epsilon", float("nan")),
            mean_abs_td=getattr(policy, "last_mean_abs_td", float("nan")),
        )
        w_prev = w
        t += 1

    try:
        for incoming in events:
            for released in buffer.push(incoming):
                process(released)
        for released in buffer.flush():
            process(released)
    finally:
        if dump_fh is not None:
            dump_fh.close()

    metrics = metrics_from_log(log, cfg.drift_ticks, cfg.eval_interval)
    return metrics, log


def _retrain(classifier, summary_feats, labels, d, cfg, rng) -> None:
    feats = summary_feats.last(cfg.retrain_window)
    recent_labels = np.asarray(labels[-cfg.retrain_window:])
    mask = recent_labels >= 0
    if not mask.any():
        return
    feats = feats[mask]
    recent_labels = recent_labels[mask]
    summaries = [WindowSummary(row[:d], row[d:]) for row in feats]
    classifier.retrain(summaries, list(recent_labels), epochs=cfg.retrain_epochs, rng=rng)
