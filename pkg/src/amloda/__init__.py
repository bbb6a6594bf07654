"""Occupancy-detection attack on smart-meter data and a billing-preserving
adversarial perturbation defense (AMLODA), with a Gaussian-noise baseline."""

from .data import DataError, NormParams, PowerTrace, SynthConfig
from .estimators import AmlodaTransformer, GaussianNoiseTransformer, LstmOccupancyClassifier
from .gaussian import GaussianConfig
from .nn import LstmModel, NumericError, TrainConfig
from .oblivious import PerturbConfig

__all__ = [
    "AmlodaTransformer",
    "DataError",
    "GaussianConfig",
    "GaussianNoiseTransformer",
    "LstmModel",
    "LstmOccupancyClassifier",
    "NormParams",
    "NumericError",
    "PerturbConfig",
    "PowerTrace",
    "SynthConfig",
    "TrainConfig",
]

__version__ = "0.1.0"
