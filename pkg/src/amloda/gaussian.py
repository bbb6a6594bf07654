"""Zero-mean Gaussian noise baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import PowerTrace
from .oblivious import PerturbedTrace


@dataclass(frozen=True)
class GaussianConfig:
    sigma2: float
    seed: int = 0

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")


def gaussian_perturb(trace: PowerTrace, config: GaussianConfig) -> PerturbedTrace:
    """Add an independent N(0, sigma2) draw to every sample, then floor at 0 W.

    ``applied_mask`` flags the floored samples.
    """
    values = trace.values
    rng = np.random.default_rng(config.seed)
    noisy = values + rng.normal(0.0, math.sqrt(config.sigma2), values.size)
    floored = noisy < 0
    return PerturbedTrace(np.where(floored, 0.0, noisy), floored)


def match_distortion(perturbed, original) -> float:
    """Mean squared per-sample deviation, i.e. the Gaussian variance with equal L2 distortion."""
    a = np.asarray(getattr(perturbed, "values", perturbed), dtype=np.float64)
    b = np.asarray(getattr(original, "values", original), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("traces differ in length")
    return float(np.mean((a - b) ** 2))


def gaussian_report(original: PowerTrace, perturbed: PerturbedTrace, config: GaussianConfig) -> dict:
    return {
        "sigma2": config.sigma2,
        "seed": config.seed,
        "floored_count": int(np.count_nonzero(perturbed.applied_mask)),
        "total_delta_w": math.fsum(perturbed.values) - math.fsum(original.values),
    }
