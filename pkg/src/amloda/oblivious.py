"""Sign-gradient noise applied as consumption-conserving subtract/add pairs.

For every pair start ``t`` (``t % pair_period == 0``) a noise value ``n_t``
is derived from the attack model's input gradient, then subtracted from
sample ``t`` and added to sample ``t + 1``. A pair is skipped when the
subtraction or the addition would leave a negative reading, so both
members are always changed together and every pair sum is preserved.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import nn
from .data import NormParams, PowerTrace, normalize

DIRECTIONS = ("pair", "final")


@dataclass(frozen=True)
class PerturbConfig:
    """``epsilon`` is in normalized units; ``gamma`` caps ``|n_t| <= gamma * P_t`` when set.

    ``direction`` picks the gradient that signs ``n_t``:

    ``"pair"``
        sign of the loss gradient along the pair's own (-1, +1) direction,
        evaluated on the window ending at ``t + 1`` (the first window that
        sees both members).
    ``"final"``
        sign of the gradient at the last position of the window ending at ``t``.
    """

    epsilon: float = 0.01
    gamma: Optional[float] = None
    pair_period: int = 2
    window_len: int = 60
    use_true_labels: bool = False
    direction: str = "final"

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive when set")
        if self.pair_period < 2 or self.pair_period % 2:
            raise ValueError("pair_period must be an even integer >= 2")
        if self.window_len < 1:
            raise ValueError("window_len must be >= 1")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")


@dataclass
class NoiseSeries:
    """Noise in watts at each pair start ``index``. ``unavailable`` lists pair
    starts without a full look-back window (their noise is 0)."""

    index: np.ndarray
    values: np.ndarray
    length: int
    unavailable: list = field(default_factory=list)

    def dense(self) -> np.ndarray:
        out = np.zeros(self.length)
        out[self.index] = self.values
        return out


@dataclass
class PerturbedTrace:
    """Perturbed readings plus a flag per pair (AMLODA) or per sample (Gaussian floor)."""

    values: np.ndarray
    applied_mask: np.ndarray

    def __len__(self):
        return self.values.size

    def as_trace(self, like: PowerTrace) -> PowerTrace:
        return like.with_values(self.values)


@dataclass
class ConstraintReport:
    epsilon: float
    gamma: Optional[float]
    total_delta_w: float
    max_relative_perturbation: float
    gamma_satisfied: bool
    flipped_fraction: Optional[float]
    skipped_pairs: int
    unavailable_pairs: int = 0

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "gamma": self.gamma,
            "total_delta_w": self.total_delta_w,
            "max_relative_perturbation": self.max_relative_perturbation,
            "gamma_satisfied": self.gamma_satisfied,
            "flipped_fraction": self.flipped_fraction,
            "skipped_pairs": self.skipped_pairs,
            "unavailable_pairs": self.unavailable_pairs,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def input_gradient_sign(model: nn.LstmModel, window, label) -> np.ndarray:
    """Elementwise sign of dLoss/dx for one normalized window; sign(0) is 0."""
    _, cache = nn.lstm_forward(model, window)
    return np.sign(nn.backward(model, cache, window, label).input_grad)


def pair_starts(n: int, pair_period: int) -> np.ndarray:
    """Pair start indices that have a partner sample inside a trace of length ``n``."""
    return np.arange(0, n - 1, pair_period)


def noise_directions(model: nn.LstmModel, trace: PowerTrace, labels, params: NormParams,
                     config: PerturbConfig):
    """Per-pair gradient signs in {-1, 0, +1} (independent of epsilon).

    Returns ``(starts, signs, unavailable)``.
    """
    x, _ = normalize(trace, params)
    L = config.window_len
    starts = pair_starts(x.size, config.pair_period)
    # window whose gradient signs the pair: ends at t (final) or t + 1 (pair)
    ends = starts + (1 if config.direction == "pair" else 0)
    ok = ends >= L - 1
    signs = np.zeros(starts.size)
    if ok.any():
        windows = np.lib.stride_tricks.sliding_window_view(x, L)[ends[ok] - (L - 1)]
        if config.use_true_labels:
            if labels is None:
                raise ValueError("use_true_labels requires ground-truth labels")
            y = np.asarray(labels, dtype=np.float64)[ends[ok]]
        else:
            y = (nn.predict_proba(model, windows) >= 0.5).astype(np.float64)
        grads = nn.input_gradients(model, windows, y)
        if config.direction == "pair":
            # moving -1 at t and +1 at t+1 changes the loss by g[t+1] - g[t]
            signs[ok] = np.sign(grads[:, -1] - grads[:, -2]) if L >= 2 else np.sign(grads[:, -1])
        else:
            signs[ok] = np.sign(grads[:, -1])
    return starts, signs, starts[~ok].tolist()


def scale_noise(trace: PowerTrace, starts, signs, params: NormParams, config: PerturbConfig,
                unavailable=()) -> NoiseSeries:
    """Turn signs into watts, ``n_t = epsilon * sign * (max_w - min_w)``, then apply the gamma cap."""
    values = config.epsilon * np.asarray(signs, dtype=np.float64) * params.span
    if config.gamma is not None:
        cap = config.gamma * np.abs(trace.values[starts])
        values = np.clip(values, -cap, cap)
    return NoiseSeries(np.asarray(starts), values, len(trace), list(unavailable))


def compute_noise(model: nn.LstmModel, trace: PowerTrace, labels, params: NormParams,
                  config: PerturbConfig) -> NoiseSeries:
    if config.epsilon == 0:
        starts = pair_starts(len(trace), config.pair_period)
        return NoiseSeries(starts, np.zeros(starts.size), len(trace))
    starts, signs, unavailable = noise_directions(model, trace, labels, params, config)
    return scale_noise(trace, starts, signs, params, config, unavailable)


def apply_paired_perturbation(trace: PowerTrace, noise: NoiseSeries) -> PerturbedTrace:
    """Subtract ``n_t`` at ``t`` and add it at ``t + 1`` wherever both results stay >= 0."""
    P = trace.values
    if noise.length != P.size:
        raise ValueError(f"noise covers {noise.length} samples, trace has {P.size}")
    t = noise.index
    n = noise.values
    applied = (P[t] >= n) & (P[t + 1] + n >= 0)
    out = P.copy()
    out[t[applied]] -= n[applied]
    out[t[applied] + 1] += n[applied]
    return PerturbedTrace(out, applied)


def flipped_fraction(model: nn.LstmModel, original, perturbed, params: NormParams, window_len: int) -> float:
    """Share of stride-1 windows whose predicted label changes after perturbation."""
    a, _ = normalize(np.asarray(original, dtype=np.float64), params)
    b, _ = normalize(np.asarray(perturbed, dtype=np.float64), params)
    if np.array_equal(a, b):
        return 0.0
    total = a.size - window_len + 1
    if total <= 0:
        return 0.0
    # only windows that contain a changed sample can flip
    hits = np.convolve((a != b).astype(np.int64), np.ones(window_len, dtype=np.int64), mode="valid")
    idx = np.flatnonzero(hits)
    wa = np.lib.stride_tricks.sliding_window_view(a, window_len)[idx]
    wb = np.lib.stride_tricks.sliding_window_view(b, window_len)[idx]
    pa = nn.predict_proba(model, wa) >= 0.5
    pb = nn.predict_proba(model, wb) >= 0.5
    return float(np.count_nonzero(pa != pb)) / total


def constraint_report(trace: PowerTrace, noise: NoiseSeries, result: PerturbedTrace,
                      config: PerturbConfig, flipped: Optional[float] = None) -> ConstraintReport:
    P = trace.values
    applied = result.applied_mask
    n = np.abs(noise.values[applied])
    base = np.abs(P[noise.index[applied]])
    active = n > 0
    with np.errstate(divide="ignore"):
        rel = n[active] / base[active]
    max_rel = float(rel.max()) if rel.size else 0.0
    gamma_ok = True if config.gamma is None else bool(max_rel <= config.gamma * (1 + 1e-12))
    return ConstraintReport(
        epsilon=config.epsilon,
        gamma=config.gamma,
        total_delta_w=math.fsum(result.values) - math.fsum(P),
        max_relative_perturbation=max_rel,
        gamma_satisfied=gamma_ok,
        flipped_fraction=flipped,
        skipped_pairs=int(np.count_nonzero(~applied)),
        unavailable_pairs=len(noise.unavailable),
    )


def generate_oblivious_trace(model: nn.LstmModel, trace: PowerTrace, labels, params: NormParams,
                             config: PerturbConfig, evaluate: bool = True):
    """Noise computation followed by paired application; returns ``(PerturbedTrace, ConstraintReport)``."""
    noise = compute_noise(model, trace, labels, params, config)
    result = apply_paired_perturbation(trace, noise)
    flipped = None
    if evaluate:
        flipped = flipped_fraction(model, trace.values, result.values, params, config.window_len)
    return result, constraint_report(trace, noise, result, config, flipped)
