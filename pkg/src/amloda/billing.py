"""Time-of-use and peak-load tariffs, and the bill invariance check for perturbed traces.

Rates are per watt-sample. At 1 Hz a watt-sample is one joule, so a
price quoted in currency/kWh converts with ``rate = price / 3.6e6``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

WATT_SECONDS_PER_KWH = 3.6e6


class TariffError(ValueError):
    pass


@dataclass(frozen=True)
class TouSchedule:
    """Consecutive ``(frame_length, rate)`` frames; repeated cyclically over longer traces."""

    frames: tuple

    def __post_init__(self):
        frames = tuple((int(n), float(r)) for n, r in self.frames)
        if not frames:
            raise TariffError("TOU schedule has no frames")
        if any(n < 1 for n, _ in frames) or any(r < 0 for _, r in frames):
            raise TariffError("frame lengths must be >= 1 and rates >= 0")
        object.__setattr__(self, "frames", frames)

    @property
    def period(self) -> int:
        return sum(n for n, _ in self.frames)


@dataclass(frozen=True)
class PlpSchedule:
    """Consumption-bucket pricing: a frame total ``m`` with ``k_j <= m < k_{j+1}`` pays ``m * rates[j]``."""

    thresholds: tuple
    rates: tuple
    frame_length: int

    def __post_init__(self):
        k = tuple(float(v) for v in self.thresholds)
        p = tuple(float(v) for v in self.rates)
        if len(p) != len(k) + 1:
            raise TariffError("PLP needs exactly one more rate than thresholds")
        if any(b <= a for a, b in zip(k, k[1:])):
            raise TariffError("PLP thresholds must be strictly increasing")
        if any(r < 0 for r in p) or int(self.frame_length) < 1:
            raise TariffError("rates must be >= 0 and frame_length >= 1")
        object.__setattr__(self, "thresholds", k)
        object.__setattr__(self, "rates", p)
        object.__setattr__(self, "frame_length", int(self.frame_length))


Tariff = Union[TouSchedule, PlpSchedule]


def _values(trace) -> np.ndarray:
    return np.asarray(getattr(trace, "values", trace), dtype=np.float64)


def _frame_sums(values: np.ndarray, lengths) -> np.ndarray:
    bounds = np.r_[0, np.cumsum(lengths)]
    return np.array([math.fsum(values[a:b]) for a, b in zip(bounds[:-1], bounds[1:])])


def frame_consumption(trace, frame_length: int, pad_zero: bool = False) -> np.ndarray:
    """Total watt-samples in each consecutive frame of ``frame_length`` samples."""
    values = _values(trace)
    if frame_length < 1:
        raise TariffError("frame_length must be >= 1")
    rem = values.size % frame_length
    if rem:
        if not pad_zero:
            raise TariffError(f"trace length {values.size} is not a multiple of frame length {frame_length} (pad_zero fills the last frame)")
        values = np.r_[values, np.zeros(frame_length - rem)]
    return _frame_sums(values, [frame_length] * (values.size // frame_length))


def tou_frames(trace, schedule: TouSchedule, pad_zero: bool = False):
    """Frame totals and their rates, tiling the schedule over the trace."""
    values = _values(trace)
    lengths, rates, covered = [], [], 0
    while covered < values.size:
        for n, r in schedule.frames:
            if covered >= values.size:
                break
            if covered + n > values.size and not pad_zero:
                raise TariffError(f"trace length {values.size} ends inside a TOU frame (pad_zero fills the last frame)")
            lengths.append(n)
            rates.append(r)
            covered += n
    if covered > values.size:
        values = np.r_[values, np.zeros(covered - values.size)]
    return _frame_sums(values, lengths), np.array(rates)


def tou_bill(frames, rates) -> float:
    """Sum of rate times consumption over frames."""
    frames = np.asarray(frames, dtype=np.float64)
    rates = np.asarray(rates, dtype=np.float64)
    if frames.shape != rates.shape:
        raise TariffError(f"{frames.size} frames but {rates.size} rates")
    return math.fsum(frames * rates)


def plp_rate(m: float, schedule: PlpSchedule) -> float:
    return schedule.rates[int(np.searchsorted(schedule.thresholds, m, side="right"))]


def plp_bill(frames, schedule: PlpSchedule) -> float:
    frames = np.asarray(frames, dtype=np.float64)
    buckets = np.searchsorted(schedule.thresholds, frames, side="right")
    return math.fsum(frames * np.asarray(schedule.rates)[buckets])


def bill(trace, tariff: Tariff, pad_zero: bool = False) -> float:
    if isinstance(tariff, TouSchedule):
        return tou_bill(*tou_frames(trace, tariff, pad_zero))
    return plp_bill(frame_consumption(trace, tariff.frame_length, pad_zero), tariff)


def frame_lengths(tariff: Tariff) -> list:
    if isinstance(tariff, TouSchedule):
        return [n for n, _ in tariff.frames]
    return [tariff.frame_length]


def billing_invariance_check(original, perturbed, tariff: Tariff, pad_zero: bool = False,
                             rel_tol: float = 1e-9) -> dict:
    """Bill both traces and report whether they agree to ``rel_tol``."""
    a, b = _values(original), _values(perturbed)
    if a.shape != b.shape:
        raise TariffError("original and perturbed traces differ in length")
    bill_a = bill(a, tariff, pad_zero)
    bill_b = bill(b, tariff, pad_zero)
    delta = bill_b - bill_a
    return {
        "bill_original": bill_a,
        "bill_perturbed": bill_b,
        "delta": delta,
        "invariant": abs(delta) <= rel_tol * max(abs(bill_a), abs(bill_b)),
    }


def tariff_from_dict(doc: dict) -> Tariff:
    kind = doc.get("type")
    if kind == "tou":
        return TouSchedule(tuple((f["len"], f["rate"]) for f in doc["frames"]))
    if kind == "plp":
        return PlpSchedule(tuple(doc["thresholds"]), tuple(doc["rates"]), doc["frame_len"])
    raise TariffError(f"unknown tariff type {kind!r}")


def tariff_to_dict(tariff: Tariff) -> dict:
    if isinstance(tariff, TouSchedule):
        return {"type": "tou", "frames": [{"len": n, "rate": r} for n, r in tariff.frames]}
    return {"type": "plp", "frame_len": tariff.frame_length, "thresholds": list(tariff.thresholds),
            "rates": list(tariff.rates)}


def load_tariff(path) -> Tariff:
    return tariff_from_dict(json.loads(Path(path).read_text()))
