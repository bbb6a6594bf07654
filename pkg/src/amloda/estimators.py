"""scikit-learn compatible wrappers around the attack model and the two defenses."""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import nn
from .data import NormParams, PowerTrace, normalize
from .gaussian import GaussianConfig, gaussian_perturb
from .oblivious import PerturbConfig, generate_oblivious_trace


class LstmOccupancyClassifier(ClassifierMixin, BaseEstimator):
    """Occupancy attack classifier on normalized look-back windows ``X`` of shape (n, T)."""

    def __init__(self, hidden_size=32, epochs=20, learning_rate=0.05, batch_size=32, random_state=0,
                 clip_norm=None):
        self.hidden_size = hidden_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.random_state = random_state
        self.clip_norm = clip_norm

    def _train_config(self) -> nn.TrainConfig:
        return nn.TrainConfig(epochs=self.epochs, learning_rate=self.learning_rate,
                              batch_size=self.batch_size, seed=self.random_state,
                              hidden_size=self.hidden_size, clip_norm=self.clip_norm)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        if not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        config = self._train_config()
        init = nn.LstmModel.initialize(config.hidden_size, config.seed)
        self.model_, self.loss_history_ = nn.train(init, X, y, config)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_model(cls, model: nn.LstmModel, window_len: int) -> "LstmOccupancyClassifier":
        """Wrap an already trained model (e.g. a loaded checkpoint)."""
        cfg = model.meta.get("train_config", {})
        est = cls(hidden_size=model.hidden_size, epochs=cfg.get("epochs", 20),
                  learning_rate=cfg.get("learning_rate", 0.05), batch_size=cfg.get("batch_size", 32),
                  random_state=cfg.get("seed", 0), clip_norm=cfg.get("clip_norm"))
        est.model_ = model
        est.loss_history_ = []
        est.classes_ = np.array([0, 1])
        est.n_features_in_ = window_len
        return est

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        p = nn.predict_proba(self.model_, X)
        return np.column_stack([1.0 - p, p])

    def decision_function(self, X):
        return self.predict_proba(X)[:, 1]

    def predict(self, X):
        # ties at 0.5 are classified as occupied
        return (self.decision_function(X) >= 0.5).astype(np.int64)

    def input_gradient(self, X, y=None):
        """dLoss/dx per window; ``y`` defaults to the model's own predictions."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if y is None:
            y = self.predict(X)
        return nn.input_gradients(self.model_, X, y)


def _as_trace(X) -> PowerTrace:
    if isinstance(X, PowerTrace):
        return X
    X = check_array(np.asarray(X, dtype=np.float64).reshape(-1, 1), ensure_all_finite=True)
    return PowerTrace(X.ravel())


class AmlodaTransformer(TransformerMixin, BaseEstimator):
    """Paired sign-gradient perturbation of a watt trace against a fitted attack model.

    ``fit`` records normalization bounds (unless ``norm_params`` is given);
    ``transform`` returns the perturbed trace as a 1-D array. Pass ``labels``
    to ``transform`` when ``use_true_labels`` is set.
    """

    def __init__(self, attack_model=None, epsilon=0.01, gamma=None, pair_period=2, window_len=60,
                 use_true_labels=False, direction="final", norm_params: Optional[NormParams] = None):
        self.attack_model = attack_model
        self.epsilon = epsilon
        self.gamma = gamma
        self.pair_period = pair_period
        self.window_len = window_len
        self.use_true_labels = use_true_labels
        self.direction = direction
        self.norm_params = norm_params

    def _model(self) -> nn.LstmModel:
        model = self.attack_model
        if isinstance(model, LstmOccupancyClassifier):
            check_is_fitted(model, "model_")
            return model.model_
        if isinstance(model, nn.LstmModel):
            return model
        raise TypeError("attack_model must be an LstmModel or a fitted LstmOccupancyClassifier")

    def fit(self, X, y=None):
        trace = _as_trace(X)
        self.norm_params_ = self.norm_params or normalize(trace)[1]
        self.config_ = PerturbConfig(epsilon=self.epsilon, gamma=self.gamma, pair_period=self.pair_period,
                                     window_len=self.window_len, use_true_labels=self.use_true_labels,
                                     direction=self.direction)
        return self

    def transform(self, X, labels=None):
        check_is_fitted(self, "config_")
        trace = _as_trace(X)
        result, self.report_ = generate_oblivious_trace(self._model(), trace, labels, self.norm_params_,
                                                        self.config_, evaluate=False)
        return result.values

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X).transform(X, labels=y)


class GaussianNoiseTransformer(TransformerMixin, BaseEstimator):
    """Zero-mean Gaussian noise baseline, floored at 0 W."""

    def __init__(self, sigma2=7.5, random_state=0):
        self.sigma2 = sigma2
        self.random_state = random_state

    def fit(self, X, y=None):
        self.config_ = GaussianConfig(self.sigma2, self.random_state)
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        return gaussian_perturb(_as_trace(X), self.config_).values
