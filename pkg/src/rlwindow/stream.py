"""Event model, stream sources and the out-of-order reorder buffer.

Streams are plain single-consumer iterators of :class:`StreamEvent`. Sources
are either CSV files (``load_csv_stream``) or the seeded synthetic generator
(``synth_stream``), which can inject distribution shifts via
:class:`DriftSpec`.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np


class StreamError(ValueError):
    """Malformed stream input (bad CSV cell, wrong dimension, bad schema)."""


@dataclass
class StreamEvent:
    """One timestamped d-dimensional sample, optionally labeled.

    ``timestamp`` is abstract event time in integer ticks; ``values`` is a
    float64 vector of the d measurements; ``label`` is a class index or None.
    """

    timestamp: int
    values: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise StreamError(f"event values must be a 1-d vector, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise StreamError(f"event at t={self.timestamp} has non-finite values")
        if self.label is not None and self.label < 0:
            raise StreamError(f"event at t={self.timestamp} has negative label {self.label}")

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class DriftSpec:
    """Recurring distribution shift applied to a subset of dimensions.

    Every ``period`` instances the affected dims gain ``mean_delta`` on their
    mean and have their deviation from the mean multiplied by
    ``scale_factor``. Shifts accumulate: after k periods the offset is
    k*mean_delta and the deviation scale is scale_factor**k.
    """

    period: int = 10_000
    affected_dims: tuple = (0,)
    mean_delta: float = 0.0
    scale_factor: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "affected_dims", tuple(sorted(set(self.affected_dims))))
        if self.period <= 0:
            raise ValueError(f"drift period must be positive, got {self.period}")
        if not self.affected_dims:
            raise ValueError("drift affected_dims must be nonempty")
        if any(i < 0 for i in self.affected_dims):
            raise ValueError(f"drift affected_dims out of range: {self.affected_dims}")
        if self.scale_factor <= 0:
            raise ValueError(f"drift scale_factor must be positive, got {self.scale_factor}")

    def validate_for_dim(self, d: int) -> None:
        if any(i >= d for i in self.affected_dims):
            raise ValueError(f"drift affected_dims {self.affected_dims} out of range for d={d}")


class ReorderBuffer:
    """Reorders out-of-order events within a fixed timestamp horizon.

    Events are released in nondecreasing timestamp order. The watermark is
    ``max_seen_timestamp - horizon``; pending events at or below it are
    released, and an arrival strictly below it is dropped and counted late.
    Nothing is held longer than ``horizon`` ticks of stream progress.
    """

    def __init__(self, horizon: int = 10):
        if horizon < 0:
            raise ValueError(f"horizon must be >= 0, got {horizon}")
        self.horizon = horizon
        self.pending: list = []  # heap of (timestamp, seq, event)
        self.late_count = 0
        self.total_count = 0
        self._max_seen: Optional[int] = None
        self._seq = 0  # FIFO tie-break for equal timestamps

    @property
    def ooo_fraction(self) -> float:
        """Fraction of pushed events dropped as late (0 when nothing pushed)."""
        if self.total_count == 0:
            return 0.0
        return self.late_count / self.total_count

    def push(self, event: StreamEvent) -> list:
        """Admit one event; return the events released by this push (in order)."""
        self.total_count += 1
        if self._max_seen is not None and event.timestamp < self._max_seen - self.horizon:
            self.late_count += 1
            return []
        heapq.heappush(self.pending, (event.timestamp, self._seq, event))
        self._seq += 1
        if self._max_seen is None or event.timestamp > self._max_seen:
            self._max_seen = event.timestamp
        watermark = self._max_seen - self.horizon
        released = []
        while self.pending and self.pending[0][0] <= watermark:
            released.append(heapq.heappop(self.pending)[2])
        return released

    def flush(self) -> list:
        """Release every pending event (stream end)."""
        released = [heapq.heappop(self.pending)[2] for _ in range(len(self.pending))]
        return released


def reorder(buffer: ReorderBuffer, event: StreamEvent) -> list:
    """Functional alias for ``buffer.push(event)``."""
    return buffer.push(event)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

ColumnRef = Union[str, int]

ROW_INDEX = "row-index"


@dataclass(frozen=True)
class CsvSchema:
    """Column map for CSV ingestion.

    ``timestamp`` is a column name, a 0-based column index, or ``"row-index"``
    to number events by file order. ``value_columns`` lists the d measurement
    columns; ``label`` optionally names the class column. Name references
    require ``has_header=True``.
    """

    value_columns: tuple
    timestamp: ColumnRef = ROW_INDEX
    label: Optional[ColumnRef] = None
    has_header: bool = True

    def __post_init__(self):
        object.__setattr__(self, "value_columns", tuple(self.value_columns))
        if not self.value_columns:
            raise StreamError("schema needs at least one value column")
        named = [c for c in self._all_columns() if isinstance(c, str)]
        if named and not self.has_header:
            raise StreamError(f"schema names columns {named} but has_header is false")

    def _all_columns(self):
        cols = list(self.value_columns)
        if isinstance(self.timestamp, str) and self.timestamp != ROW_INDEX:
            cols.append(self.timestamp)
        elif isinstance(self.timestamp, int):
            cols.append(self.timestamp)
        if self.label is not None:
            cols.append(self.label)
        return cols


def _resolve(ref: ColumnRef, header: Optional[Sequence[str]], path) -> int:
    if isinstance(ref, int):
        return ref
    if header is None or ref not in header:
        raise StreamError(f"{path}: column {ref!r} not found in header {header}")
    return header.index(ref)


def _parse_float(cell: str, row_num: int, col: int, path) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise StreamError(f"{path}: row {row_num}: non-numeric cell {cell!r} in column {col}") from None
    if not math.isfinite(value):
        raise StreamError(f"{path}: row {row_num}: non-finite value {cell!r} in column {col}")
    return value


def load_csv_stream(path, schema: CsvSchema) -> Iterator[StreamEvent]:
    """Yield StreamEvents from a CSV file in file order.

    Non-numeric or non-finite cells are errors that name the offending
    1-based row; short rows raise a dimension mismatch.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"stream file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = None
        if schema.has_header:
            header = next(reader, None)
            if header is None:
                return
        value_idx = [_resolve(c, header, path) for c in schema.value_columns]
        ts_idx = None
        if schema.timestamp != ROW_INDEX:
            ts_idx = _resolve(schema.timestamp, header, path)
        label_idx = None if schema.label is None else _resolve(schema.label, header, path)

        needed = max(value_idx + [i for i in (ts_idx, label_idx) if i is not None])
        for row_num, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) <= needed:
                raise StreamError(
                    f"{path}: row {row_num}: expected at least {needed + 1} columns, got {len(row)}"
                )
            values = np.array([_parse_float(row[i], row_num, i, path) for i in value_idx])
            if ts_idx is None:
                timestamp = row_num - 1
            else:
                timestamp = int(_parse_float(row[ts_idx], row_num, ts_idx, path))
            label = None
            if label_idx is not None:
                raw = row[label_idx].strip()
                if raw:
                    try:
                        label = int(raw)
                    except ValueError:
                        raise StreamError(
                            f"{path}: row {row_num}: non-integer label {raw!r}"
                        ) from None
            yield StreamEvent(timestamp=timestamp, values=values, label=label)


def write_csv(events: Iterable[StreamEvent], path) -> CsvSchema:
    """Export events to CSV (same format load_csv_stream reads back)."""
    path = Path(path)
    first = True
    d = None
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        for ev in events:
            if first:
                d = ev.dim
                writer.writerow(["t"] + [f"x{i}" for i in range(d)] + ["label"])
                first = False
            writer.writerow(
                [ev.timestamp]
                + [repr(float(v)) for v in ev.values]
                + ["" if ev.label is None else ev.label]
            )
        if first:  # no events: still emit a parseable header for d=1
            writer.writerow(["t", "x0", "label"])
            d = 1
    return CsvSchema(
        value_columns=tuple(f"x{i}" for i in range(d)),
        timestamp="t",
        label="label",
        has_header=True,
    )


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

#: events per class regime segment; classes rotate round-robin
SEGMENT_LEN = 250
#: reference period (ticks per sinusoid cycle unit) for class waveforms
_WAVE_BASE = 100.0


@dataclass
class _ClassRegime:
    mean: np.ndarray          # (d,)
    noise_std: np.ndarray     # (d,)
    wave_amp: np.ndarray      # (d,)
    wave_cycles: np.ndarray   # (d,) cycles per _WAVE_BASE ticks
    wave_phase: np.ndarray    # (d,)
    mix: np.ndarray           # (d, d) mixing matrix for correlated noise


#: per-dim RMS separation between class means, in noise-std units
_MEAN_SEP = 1.1
#: noise/amplitude growth from the first to the last class
_SPREAD = 0.5


def _draw_regimes(rng: np.random.Generator, d: int, class_count: int) -> list:
    """Class-conditional Gaussian regimes with per-class sinusoids.

    Separation magnitudes are fixed (only their directions are random), so
    stream difficulty is stable across seeds: means sit ~_MEAN_SEP noise
    units apart, noise/amplitude scale up _SPREAD across classes, and each
    class gets its own waveform frequencies and correlation structure. All
    of variance, correlation and spectral features stay discriminative while
    blended windows remain genuinely ambiguous.
    """
    base_mean = rng.uniform(-1.0, 1.0, size=d)
    regimes = []
    for c in range(class_count):
        spread = 1.0 + _SPREAD * c / max(1, class_count - 1)
        direction = rng.standard_normal(d)
        direction *= np.sqrt(d) / np.linalg.norm(direction)
        mean = base_mean + _MEAN_SEP * direction
        noise_std = rng.uniform(0.9, 1.1, size=d) * spread
        wave_amp = rng.uniform(0.8, 1.2, size=d) * spread
        # integer cycles per _WAVE_BASE so waveforms repeat exactly across blocks
        wave_cycles = rng.integers(2, 7, size=d).astype(np.float64) + c
        wave_phase = rng.uniform(0.0, 2.0 * np.pi, size=d)
        raw = rng.uniform(-1.0, 1.0, size=(d, d))
        mix = 0.35 * raw + np.eye(d)
        regimes.append(_ClassRegime(mean, noise_std, wave_amp, wave_cycles, wave_phase, mix))
    return regimes


def _class_schedule(n: int, class_count: int, segment_len: int) -> np.ndarray:
    """Palindromic segment rotation 0,1,...,C-1,C-1,...,1,0 repeating.

    Every adjacent class pair occurs as a boundary in both directions, so a
    window blending two regimes carries no directional hint about which one
    is current.
    """
    cycle = np.concatenate([np.arange(class_count), np.arange(class_count)[::-1]])
    return cycle[(np.arange(n) // segment_len) % (2 * class_count)]


def synth_stream(
    d: int,
    n: int,
    class_count: int,
    drift: Optional[DriftSpec] = None,
    seed: int = 0,
    segment_len: int = SEGMENT_LEN,
) -> list:
    """Generate a labeled synthetic stream of n in-order events.

    Class regimes rotate round-robin every ``segment_len`` events. The raw
    stream is a pure function of (d, n, class_count, seed, segment_len);
    drift is applied afterwards as a transform of the affected dims only, so
    unaffected dims are bit-identical with and without a DriftSpec.
    """
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if class_count < 2:
        raise ValueError(f"class_count must be >= 2, got {class_count}")
    if drift is not None:
        drift.validate_for_dim(d)

    rng = np.random.default_rng(seed)
    regimes = _draw_regimes(rng, d, class_count)

    t = np.arange(n, dtype=np.float64)
    labels = _class_schedule(n, class_count, segment_len)
    noise = rng.standard_normal((n, d))

    values = np.empty((n, d))
    means = np.empty((n, d))
    for c, reg in enumerate(regimes):
        rows = labels == c
        if not np.any(rows):
            continue
        tc = t[rows, None]
        wave = reg.wave_amp * np.sin(2.0 * np.pi * reg.wave_cycles * tc / _WAVE_BASE + reg.wave_phase)
        correlated = noise[rows] @ reg.mix.T
        values[rows] = reg.mean + wave + reg.noise_std * correlated
        means[rows] = reg.mean

    if drift is not None and (drift.mean_delta != 0.0 or drift.scale_factor != 1.0):
        shifts = np.arange(n) // drift.period  # k shifts at event index t
        dims = list(drift.affected_dims)
        k = shifts[:, None].astype(np.float64)
        base = means[:, dims]
        deviation = values[:, dims] - base
        values[:, dims] = base + k * drift.mean_delta + (drift.scale_factor ** k) * deviation

    return [
        StreamEvent(timestamp=i, values=values[i], label=int(labels[i]))
        for i in range(n)
    ]
