"""Rolling m-event window and the policy state vector.

The state concatenates, in canonical order: per-dim variances, pairwise
correlations (i<j lexicographic), per-dim rate of change, histogram entropy,
out-of-order fraction, per-dim spectral magnitudes and a split-half drift
score. Length is 3d + d(d-1)/2 + 3 (36 for d=6).
"""

from __future__ import annotations

from functools import lru_cache
from typing import Optional

import numpy as np

from .stream import ReorderBuffer, StreamEvent

ENTROPY_BINS = 16
MIN_SPECTRAL_COUNT = 4  # below this, spectral and drift features are zero


def state_length(d: int) -> int:
    return 3 * d + d * (d - 1) // 2 + 3


def streamx_state_length(d: int) -> int:
    """Reduced state (variances + rates only) used by the simpler DQN baseline."""
    return 2 * d


class FeatureWindow:
    """Ring buffer over the last ``capacity`` events with running sums.

    Running per-dim sums of x and x^2 give O(d) variance updates per push;
    everything else is recomputed from the ring contents, which are exposed
    chronologically via :meth:`contents`.
    """

    def __init__(self, d: int, capacity: int = 200):
        if d < 1:
            raise ValueError(f"d must be >= 1, got {d}")
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.d = d
        self.capacity = capacity
        self._ring = np.zeros((capacity, d))
        self._head = 0  # next write slot
        self.count = 0
        self.sum_x = np.zeros(d)
        self.sum_x2 = np.zeros(d)

    def push(self, event: StreamEvent) -> "FeatureWindow":
        if event.dim != self.d:
            raise ValueError(f"event dimension {event.dim} != window dimension {self.d}")
        v = event.values
        if self.count == self.capacity:  # evict oldest
            old = self._ring[self._head]
            self.sum_x -= old
            self.sum_x2 -= old * old
        else:
            self.count += 1
        self._ring[self._head] = v
        self._head = (self._head + 1) % self.capacity
        self.sum_x += v
        self.sum_x2 += v * v
        return self

    def contents(self) -> np.ndarray:
        """Stored events, oldest first, shape (count, d)."""
        if self.count < self.capacity:
            return self._ring[: self.count]
        return np.concatenate([self._ring[self._head:], self._ring[: self._head]])

    def recomputed_sums(self):
        """Brute-force (sum_x, sum_x2) from the ring, for integrity checks."""
        data = self.contents()
        return data.sum(axis=0), (data * data).sum(axis=0)

    @property
    def full(self) -> bool:
        return self.count == self.capacity


def _constant_dims(data: np.ndarray) -> np.ndarray:
    return (data == data[0]).all(axis=0)


def variance_per_dim(window: FeatureWindow) -> np.ndarray:
    """Population variance per dim from the running sums; 0 when count < 2.

    Exactly-constant dims report exactly 0 (the running-sum arithmetic would
    otherwise leave ~1e-14 residue, which matters downstream where zero
    variance switches correlations off).
    """
    if window.count < 2:
        return np.zeros(window.d)
    n = window.count
    mean = window.sum_x / n
    var = np.maximum(window.sum_x2 / n - mean * mean, 0.0)
    var[_constant_dims(window.contents())] = 0.0
    return var


@lru_cache(maxsize=64)
def _triu_pairs(d: int):
    return np.triu_indices(d, k=1)


def _correlations_from(data: np.ndarray) -> np.ndarray:
    d = data.shape[1]
    centered = data - data.mean(axis=0)
    cov = centered.T @ centered / data.shape[0]
    std = np.sqrt(np.diag(cov)).copy()
    std[_constant_dims(data)] = 0.0
    iu, ju = _triu_pairs(d)
    denom = std[iu] * std[ju]
    safe = np.where(denom > 0.0, denom, 1.0)
    out = np.where(denom > 0.0, cov[iu, ju] / safe, 0.0)
    return np.clip(out, -1.0, 1.0)


def pairwise_correlations(window: FeatureWindow) -> np.ndarray:
    """Pearson coefficients for each (i<j) pair, lexicographic.

    Pairs where either dim is constant yield 0. Values are clipped to
    [-1, 1] against round-off.
    """
    d = window.d
    if window.count < 2 or d < 2:
        return np.zeros(d * (d - 1) // 2)
    return _correlations_from(window.contents())


def rate_of_change(window: FeatureWindow) -> np.ndarray:
    """Last event minus second-to-last, per dim; zeros when count < 2."""
    if window.count < 2:
        return np.zeros(window.d)
    data = window.contents()
    return data[-1] - data[-2]


def bin_index(value: float, lo: float, hi: float, bins: int) -> int:
    """Floor binning of value into [lo, hi] with the top edge in the last bin."""
    idx = int((value - lo) / (hi - lo) * bins)
    return min(idx, bins - 1)


def _entropy_from(data: np.ndarray, bins: int) -> float:
    flat = data.ravel()
    lo = flat.min()
    hi = flat.max()
    if hi <= lo:
        return 0.0
    idx = np.minimum(((flat - lo) / (hi - lo) * bins).astype(np.int64), bins - 1)
    counts = np.bincount(idx, minlength=bins)
    p = counts[counts > 0] / flat.size
    return float(-(p * np.log(p)).sum())


def entropy(window: FeatureWindow, bins: int = ENTROPY_BINS) -> float:
    """Shannon entropy (nats) of a histogram over all d*count stored values.

    Binned between the window-wide min and max; a constant window has zero
    entropy.
    """
    if window.count < 1:
        return 0.0
    return _entropy_from(window.contents(), bins)


def _spectral_from(data: np.ndarray) -> np.ndarray:
    spectrum = np.fft.rfft(data, axis=0)
    mags = np.abs(spectrum[1:])  # drop DC
    out = mags.max(axis=0) / data.shape[0]
    out[_constant_dims(data)] = 0.0  # only DC energy, exactly
    return out


def spectral_features(window: FeatureWindow) -> np.ndarray:
    """Dominant non-DC DFT magnitude per dim, divided by the sample count.

    A pure sinusoid with a whole number of periods over the window and
    amplitude A yields A/2. Fewer than MIN_SPECTRAL_COUNT samples give zeros.
    """
    if window.count < MIN_SPECTRAL_COUNT:
        return np.zeros(window.d)
    return _spectral_from(window.contents())


def _drift_from(data: np.ndarray) -> float:
    n = data.shape[0]
    h = n // 2
    first = data[:h]
    second = data[n - h:]
    diff = np.abs(second.mean(axis=0) - first.mean(axis=0))
    pooled = np.sqrt((first.var(axis=0) + second.var(axis=0)) / 2.0)
    return float(np.mean(diff / (pooled + 1e-8)))


def drift_score(window: FeatureWindow) -> float:
    """Split-half standardized mean-shift score, averaged over dims.

    Per dim: |mean(last half) - mean(first half)| / (pooled std + 1e-8), with
    halves of length count//2 (middle element dropped when count is odd).
    Fewer than MIN_SPECTRAL_COUNT samples give 0.
    """
    if window.count < MIN_SPECTRAL_COUNT:
        return 0.0
    return _drift_from(window.contents())


def build_state(
    window: FeatureWindow,
    buffer: Optional[ReorderBuffer] = None,
    include_spectral: bool = True,
) -> np.ndarray:
    """Concatenate all features in canonical order.

    ``include_spectral=False`` drops the d spectral entries (ablation).
    The out-of-order fraction comes from the reorder buffer counters and is
    0 when no buffer is supplied.
    """
    if window.count < 1:
        raise ValueError("build_state needs at least one stored event")
    d = window.d
    n = window.count
    data = window.contents()
    ooo = buffer.ooo_fraction if buffer is not None else 0.0
    corr = _correlations_from(data) if (n >= 2 and d >= 2) else np.zeros(d * (d - 1) // 2)
    rate = data[-1] - data[-2] if n >= 2 else np.zeros(d)
    parts = [
        variance_per_dim(window),
        corr,
        rate,
        [_entropy_from(data, ENTROPY_BINS)],
        [ooo],
    ]
    if include_spectral:
        parts.append(_spectral_from(data) if n >= MIN_SPECTRAL_COUNT else np.zeros(d))
    parts.append([_drift_from(data) if n >= MIN_SPECTRAL_COUNT else 0.0])
    return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts])


def build_streamx_state(window: FeatureWindow) -> np.ndarray:
    """Variance + rate-of-change state for the reduced-state DQN baseline."""
    if window.count < 1:
        raise ValueError("build_streamx_state needs at least one stored event")
    return np.concatenate([variance_per_dim(window), rate_of_change(window)])


class FeatureNormalizer:
    """Per-feature streaming z-score (Welford running mean/variance).

    ``normalize`` standardizes with the statistics accumulated *before* the
    sample, then observes it; the first call therefore returns zeros.
    Variance floor 1e-8.
    """

    def __init__(self, n_features: int):
        self.n_features = n_features
        self.count = 0
        self.mean = np.zeros(n_features)
        self._m2 = np.zeros(n_features)

    @property
    def variance(self) -> np.ndarray:
        if self.count < 1:
            return np.zeros(self.n_features)
        return self._m2 / self.count

    def normalize(self, state: np.ndarray) -> np.ndarray:
        state = np.asarray(state, dtype=np.float64)
        if state.shape != (self.n_features,):
            raise ValueError(f"expected {self.n_features} features, got shape {state.shape}")
        if self.count == 0:
            out = np.zeros(self.n_features)
        else:
            scale = np.sqrt(np.maximum(self.variance, 1e-8))
            out = (state - self.mean) / scale
        self.observe(state)
        return out

    def observe(self, state: np.ndarray) -> None:
        self.count += 1
        delta = state - self.mean
        self.mean += delta / self.count
        self._m2 += delta * (state - self.mean)
