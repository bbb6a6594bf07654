"""Trace ingestion, cleaning, normalization, windowing and synthetic households."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from datetime import time as clock_time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

SECONDS_PER_DAY = 86400
# 2012-07-01 00:00:00 UTC, start of the ECO summer period.
SYNTH_EPOCH = 1341100800


class DataError(ValueError):
    """Raised for unreadable, malformed or degenerate input data."""


@dataclass(frozen=True)
class PowerTrace:
    """Uniformly sampled power readings in watts. ``NaN`` marks a missing sample."""

    values: np.ndarray
    start_time: float = 0.0
    sample_period: float = 1.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise DataError("no samples")
        if self.sample_period <= 0:
            raise DataError("sample_period must be positive")
        if np.any(values[~np.isnan(values)] < 0):
            raise DataError("power readings must be non-negative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size

    @property
    def has_missing(self) -> bool:
        return bool(np.isnan(self.values).any())

    @property
    def timestamps(self) -> np.ndarray:
        return self.start_time + self.sample_period * np.arange(len(self))

    def with_values(self, values) -> "PowerTrace":
        return PowerTrace(values, self.start_time, self.sample_period)

    def total(self) -> float:
        return math.fsum(self.values)


@dataclass(frozen=True)
class NormParams:
    min_w: float
    max_w: float

    def __post_init__(self):
        if self.max_w < self.min_w:
            raise DataError("max_w must be >= min_w")

    @property
    def span(self) -> float:
        return self.max_w - self.min_w

    def to_dict(self) -> dict:
        return {"min_w": self.min_w, "max_w": self.max_w}


@dataclass
class CleaningReport:
    removed: list = field(default_factory=list)

    def apply(self, labels: np.ndarray) -> np.ndarray:
        """Drop the removed indices from a sequence aligned with the raw trace."""
        return np.delete(np.asarray(labels), self.removed)

    def to_json(self) -> str:
        return json.dumps({"removed": [int(i) for i in self.removed]})


@dataclass(frozen=True)
class WindowedDataset:
    """Look-back windows ``X`` of shape ``(n, window_len)`` with one label each.

    ``ends`` holds the index of each window's final sample in the source sequence.
    """

    X: np.ndarray
    y: np.ndarray
    window_len: int
    ends: np.ndarray

    def __len__(self):
        return self.X.shape[0]

    def subset(self, index) -> "WindowedDataset":
        return WindowedDataset(self.X[index], self.y[index], self.window_len, self.ends[index])


@dataclass(frozen=True)
class SynthConfig:
    day_count: int = 1
    base_load_w: float = 120.0
    appliance_burst_w: float = 0.0
    occupied_intervals: tuple = ((6 * 3600 + 1800, 8 * 3600 + 1800), (12 * 3600, 13 * 3600), (18 * 3600, 22 * 3600))
    noise_std_w: float = 5.0
    seed: int = 7
    # small occupant loads (lights, screens) switching within occupied intervals
    small_load_w: float = 300.0
    # mean on / off dwell times in seconds of the small-load and appliance processes
    small_on_s: float = 40.0
    small_off_s: float = 20.0
    burst_on_s: float = 120.0
    burst_off_s: float = 900.0

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "occupied_intervals" in d:
            d["occupied_intervals"] = tuple(tuple(iv) for iv in d["occupied_intervals"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "day_count": self.day_count,
            "base_load_w": self.base_load_w,
            "appliance_burst_w": self.appliance_burst_w,
            "occupied_intervals": [list(iv) for iv in self.occupied_intervals],
            "noise_std_w": self.noise_std_w,
            "seed": self.seed,
            "small_load_w": self.small_load_w,
            "small_on_s": self.small_on_s,
            "small_off_s": self.small_off_s,
            "burst_on_s": self.burst_on_s,
            "burst_off_s": self.burst_off_s,
        }


def _parse_timestamp(text: str) -> float:
    text = text.strip()
    try:
        return float(int(text))
    except ValueError:
        pass
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _parse_power(text: str) -> float:
    text = text.strip()
    if text == "":
        return math.nan
    value = float(text)
    if value == -1:
        return math.nan
    if value < 0 or not math.isfinite(value):
        raise ValueError(f"invalid power reading {text!r}")
    return value


def _parse_label(text: str) -> int:
    text = text.strip()
    if text == "" or text == "-1":
        return -1
    label = int(text)
    if label not in (0, 1):
        raise ValueError(f"occupied must be 0 or 1, got {text!r}")
    return label


def load_eco_csv(path) -> tuple[PowerTrace, Optional[np.ndarray]]:
    """Read a canonical ``timestamp,power_w[,occupied]`` file.

    Missing readings (empty field or ``-1``) and timestamp gaps become ``NaN``
    samples; missing labels become ``-1``. Labels are returned only when the
    third column is present.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    times, powers, labels = [], [], []
    has_labels = None
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if lineno == 1 and row[0].strip().lower() == "timestamp":
                has_labels = len(row) >= 3
                continue
            if len(row) not in (2, 3):
                raise DataError(f"row {lineno}: expected 2 or 3 columns, got {len(row)}")
            if has_labels is None:
                has_labels = len(row) == 3
            if (len(row) == 3) != has_labels:
                raise DataError(f"row {lineno}: inconsistent column count")
            try:
                times.append(_parse_timestamp(row[0]))
                powers.append(_parse_power(row[1]))
                if has_labels:
                    labels.append(_parse_label(row[2]))
            except ValueError as exc:
                raise DataError(f"row {lineno}: {exc}") from None
    if not times:
        raise DataError("no samples")

    t = np.asarray(times)
    steps = np.diff(t)
    if np.any(steps <= 0):
        bad = int(np.argmax(steps <= 0)) + 2
        raise DataError(f"timestamps not strictly increasing at sample {bad}")
    period = float(steps.min()) if steps.size else 1.0
    slots = np.rint((t - t[0]) / period).astype(np.int64)
    values = np.full(slots[-1] + 1, np.nan)
    values[slots] = powers
    trace = PowerTrace(values, start_time=float(t[0]), sample_period=period)
    if not has_labels:
        return trace, None
    lab = np.full(slots[-1] + 1, -1, dtype=np.int64)
    lab[slots] = labels
    return trace, lab


def save_trace_csv(path, trace: PowerTrace, labels=None) -> None:
    """Write a trace in the canonical CSV format (integer epoch timestamps)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", "power_w", "occupied"] if labels is not None else ["timestamp", "power_w"])
        for i, (ts, v) in enumerate(zip(trace.timestamps, trace.values)):
            power = "" if math.isnan(v) else repr(float(v))
            row = [int(round(ts)), power]
            if labels is not None:
                row.append(int(labels[i]))
            writer.writerow(row)


def clean_missing(trace: PowerTrace, labels=None) -> tuple[PowerTrace, CleaningReport]:
    """Remove missing samples (and samples whose label is missing).

    Surviving samples keep their order. Use ``report.apply(labels)`` to keep
    a label sequence aligned.
    """
    bad = np.isnan(trace.values)
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != trace.values.shape:
            raise DataError("labels and trace differ in length")
        bad |= labels < 0
    if bad.all():
        raise DataError("empty after cleaning")
    removed = np.flatnonzero(bad).tolist()
    if not removed:
        return trace, CleaningReport()
    return trace.with_values(trace.values[~bad]), CleaningReport(removed)


def normalize(trace: PowerTrace, params: Optional[NormParams] = None) -> tuple[np.ndarray, NormParams]:
    """Min-max scale to [0, 1]. A constant trace maps to zeros."""
    values = trace.values if isinstance(trace, PowerTrace) else np.asarray(trace, dtype=np.float64)
    if values.size == 0:
        raise DataError("no samples")
    if params is None:
        params = NormParams(float(values.min()), float(values.max()))
    if params.span == 0:
        return np.zeros_like(values), params
    return (values - params.min_w) / params.span, params


def denormalize(values, params: NormParams) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if params.span == 0:
        return np.full_like(values, params.min_w)
    return values * params.span + params.min_w


def make_windows(values, labels, window_len: int, stride: int = 1) -> WindowedDataset:
    """Slice look-back windows; each window is labelled by its final sample."""
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels)
    if window_len < 1 or stride < 1:
        raise DataError("window_len and stride must be >= 1")
    if labels.shape != values.shape:
        raise DataError("labels and values differ in length")
    if values.size < window_len:
        raise DataError(f"sequence of length {values.size} is shorter than window_len={window_len}")
    view = np.lib.stride_tricks.sliding_window_view(values, window_len)[::stride]
    ends = np.arange(view.shape[0]) * stride + window_len - 1
    return WindowedDataset(np.ascontiguousarray(view), labels[ends].astype(np.int64), window_len, ends)


def split_train_test(dataset: WindowedDataset, train_fraction: float = 0.8):
    """Chronological split: the first floor(n * f) windows train, the rest test."""
    if not 0 < train_fraction < 1:
        raise DataError("train_fraction must lie strictly between 0 and 1")
    n_train = int(math.floor(len(dataset) * train_fraction))
    if n_train == 0 or n_train == len(dataset):
        raise DataError(f"cannot split {len(dataset)} windows at fraction {train_fraction}")
    return dataset.subset(slice(0, n_train)), dataset.subset(slice(n_train, None))


def split_index(n: int, train_fraction: float = 0.8) -> int:
    """Sample index where a chronological split of an ``n``-sample trace starts its test part."""
    if not 0 < train_fraction < 1:
        raise DataError("train_fraction must lie strictly between 0 and 1")
    cut = int(math.floor(n * train_fraction))
    if cut == 0 or cut == n:
        raise DataError(f"cannot split {n} samples at fraction {train_fraction}")
    return cut


def _clock_seconds(value) -> int:
    if isinstance(value, clock_time):
        return value.hour * 3600 + value.minute * 60 + value.second
    if isinstance(value, str):
        parts = [int(p) for p in value.split(":")]
        parts += [0] * (3 - len(parts))
        return parts[0] * 3600 + parts[1] * 60 + parts[2]
    return int(value)


def _occupied_mask(intervals: Sequence) -> np.ndarray:
    spans = sorted((_clock_seconds(a), _clock_seconds(b)) for a, b in intervals)
    mask = np.zeros(SECONDS_PER_DAY, dtype=bool)
    prev_end = -1
    for start, end in spans:
        if not 0 <= start < end <= SECONDS_PER_DAY:
            raise DataError(f"invalid occupied interval ({start}, {end})")
        if start < prev_end:
            raise DataError("occupied intervals overlap")
        mask[start:end] = True
        prev_end = end
    return mask


def _on_off_process(rng, n: int, amplitude: float, mean_on: float, mean_off: float) -> np.ndarray:
    """Alternating on/off segments with exponential dwell times; each on-segment
    draws its own level in [0.6, 1.0] * amplitude. Starts in the off state."""
    out = np.zeros(n)
    n_seg = int(n / (mean_on + mean_off)) + 16
    pos = 0
    while pos < n:
        off_len = 1 + rng.exponential(mean_off, n_seg).astype(np.int64)
        on_len = 1 + rng.exponential(mean_on, n_seg).astype(np.int64)
        level = rng.uniform(0.6, 1.0, n_seg) * amplitude
        for k in range(n_seg):
            pos += off_len[k]
            if pos >= n:
                break
            out[pos:pos + on_len[k]] = level[k]
            pos += on_len[k]
    return out


def synth_household(config: SynthConfig) -> tuple[PowerTrace, np.ndarray]:
    """Deterministic 1 Hz household.

    Base load plus Gaussian sensor noise everywhere; inside occupied
    intervals two on/off processes are added, frequent small loads of about
    ``small_load_w`` and rarer appliance bursts of about ``appliance_burst_w``.
    Labels are 1 exactly inside the occupied intervals.
    """
    if config.day_count < 1:
        raise DataError("day_count must be >= 1")
    if min(config.base_load_w, config.appliance_burst_w, config.noise_std_w, config.small_load_w) < 0:
        raise DataError("wattages must be non-negative")
    day_mask = _occupied_mask(config.occupied_intervals)
    occupied = np.tile(day_mask, config.day_count)
    n = occupied.size
    rng = np.random.default_rng(config.seed)

    noise = rng.normal(0.0, config.noise_std_w, n) if config.noise_std_w > 0 else np.zeros(n)
    small = _on_off_process(rng, n, config.small_load_w, config.small_on_s, config.small_off_s)
    burst = _on_off_process(rng, n, config.appliance_burst_w, config.burst_on_s, config.burst_off_s)
    power = config.base_load_w + noise + np.where(occupied, small + burst, 0.0)
    power = np.maximum(power, 0.0)
    return PowerTrace(power, start_time=float(SYNTH_EPOCH), sample_period=1.0), occupied.astype(np.int64)
