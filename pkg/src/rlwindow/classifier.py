"""Pluggable downstream classification task.

The reference implementation is multinomial logistic regression over pooled
window summaries (per-dim mean and std of the selected window),
z-conditioned by an exponential-moving-average scaler so inputs stay
bounded while the stream's scale wanders. Any object with the same
summarize/predict/update/retrain surface slots into the episode runner.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

LOGLOSS_CLAMP = 5.0
PROB_FLOOR = 1e-12
Z_CLAMP = 6.0


@dataclass
class WindowSummary:
    """Per-dim mean and population std over the selected window."""

    means: np.ndarray
    stds: np.ndarray


def summarize(values: np.ndarray) -> WindowSummary:
    """Summary of the given events, shape (w, d) with w >= 1."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 1:
        raise ValueError(f"expected a (w, d) block with w >= 1, got shape {values.shape}")
    return WindowSummary(means=values.mean(axis=0), stds=values.std(axis=0))


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max()
    e = np.exp(z)
    p = e / e.sum()
    # keep every class strictly positive even for extreme score gaps
    p = np.maximum(p, PROB_FLOOR)
    return p / p.sum()


class _EmaScaler:
    """Streaming z-scaler with a fixed adaptation horizon.

    An exponential moving average (rather than an all-history mean) keeps the
    absorption rate of distribution shifts constant over the run.
    """

    def __init__(self, n: int, alpha: float = 5e-4):
        self.alpha = alpha
        self.mean = np.zeros(n)
        self.var = np.ones(n)
        self.initialized = False

    def transform(self, phi: np.ndarray) -> np.ndarray:
        if not self.initialized:
            return np.zeros_like(phi)
        z = (phi - self.mean) / np.sqrt(self.var + 1e-8)
        return np.clip(z, -Z_CLAMP, Z_CLAMP)

    def observe(self, phi: np.ndarray) -> None:
        if not self.initialized:
            self.mean = phi.astype(np.float64).copy()
            self.var = np.ones_like(self.mean)
            self.initialized = True
            return
        delta = phi - self.mean
        self.mean += self.alpha * delta
        self.var += self.alpha * (delta * delta - self.var)

    def batch_init(self, phis: np.ndarray) -> None:
        self.mean = phis.mean(axis=0)
        self.var = np.maximum(phis.var(axis=0), 1e-8)
        self.initialized = True


class SoftmaxClassifier:
    """Online multinomial logistic regression on conditioned summary features.

    Features are [z(means), z(stds), 1] (2d+1 inputs including bias), with z
    the EMA scaler above. Weights start at zero, giving uniform initial
    predictions; per-tick updates are single SGD steps and :meth:`retrain`
    does warm-started epochs over recent data. The scaler advances only on
    :meth:`update` calls (one per labeled tick), never during predict or
    retrain, so replays are deterministic.
    """

    def __init__(self, d: int, n_classes: int, lr: float = 0.01):
        if n_classes < 2:
            raise ValueError(f"need at least 2 classes, got {n_classes}")
        self.d = d
        self.n_classes = n_classes
        self.lr = lr
        self.W = np.zeros((2 * d + 1, n_classes))
        self.scaler = _EmaScaler(2 * d)

    def features(self, summary: WindowSummary) -> np.ndarray:
        """Conditioned feature vector [z-scored means and stds, bias 1]."""
        raw = np.concatenate([summary.means, summary.stds])
        return np.concatenate([self.scaler.transform(raw), [1.0]])

    def predict(
        self, summary: WindowSummary, label: Optional[int] = None
    ) -> Tuple[int, np.ndarray, Optional[float]]:
        """(predicted class, probability vector, clamped logloss).

        Argmax ties break toward the lowest class index; logloss is
        -ln p(label) clamped at 5.0, or None when no label is given.
        """
        probs = _softmax(self.features(summary) @ self.W)
        pred = int(np.argmax(probs))
        logloss = None
        if label is not None:
            logloss = min(-float(np.log(probs[label])), LOGLOSS_CLAMP)
        return pred, probs, logloss

    def update(self, summary: WindowSummary, label: int) -> None:
        """One SGD step on the cross-entropy of this labeled summary; also
        advances the feature scaler."""
        phi = self.features(summary)
        probs = _softmax(phi @ self.W)
        grad = probs.copy()
        grad[label] -= 1.0
        self.W -= self.lr * np.outer(phi, grad)
        self.scaler.observe(np.concatenate([summary.means, summary.stds]))

    def retrain(
        self,
        summaries: Sequence[WindowSummary],
        labels: Sequence[int],
        epochs: int = 3,
        rng: Optional[np.random.Generator] = None,
    ) -> None:
        """Warm-started SGD over recent (summary, label) pairs.

        No reinitialization: training continues from the current weights.
        Pass order is shuffled per epoch by ``rng`` (sequential when None),
        so a fixed seed gives a deterministic result. epochs=0 is a no-op.
        """
        if len(summaries) != len(labels):
            raise ValueError("summaries and labels must align")
        if not summaries:
            raise ValueError("retrain needs at least one labeled summary")
        raw = np.stack([np.concatenate([s.means, s.stds]) for s in summaries])
        if not self.scaler.initialized:
            self.scaler.batch_init(raw)
        n = len(summaries)
        phi = np.concatenate([
            np.clip((raw - self.scaler.mean) / np.sqrt(self.scaler.var + 1e-8),
                    -Z_CLAMP, Z_CLAMP),
            np.ones((n, 1)),
        ], axis=1)
        labels = np.asarray(labels, dtype=np.int64)
        for _ in range(epochs):
            order = rng.permutation(n) if rng is not None else np.arange(n)
            for i in order:
                scores = phi[i] @ self.W
                probs = _softmax(scores)
                probs[labels[i]] -= 1.0
                self.W -= self.lr * np.outer(phi[i], probs)

    def training_accuracy(self, summaries: Sequence[WindowSummary], labels: Sequence[int]) -> float:
        hits = sum(self.predict(s)[0] == y for s, y in zip(summaries, labels))
        return hits / len(labels)
