"""Two-layer LSTM binary classifier with hand-written backpropagation through time.

Everything is batched over windows: inputs have shape ``(batch, T)`` and
the single-window helpers are thin wrappers. Gate blocks inside each
layer's weight matrix are ordered input, forget, output, candidate.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

PROB_EPS = 1e-12
LAYER_COUNT = 2
GATES = ("input", "forget", "output", "candidate")


class NumericError(ArithmeticError):
    """Raised when a forward pass or training run produces NaN/Inf."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 0.05
    batch_size: int = 32
    seed: int = 0
    hidden_size: int = 32
    # rescale any batch gradient whose global L2 norm exceeds this
    clip_norm: Optional[float] = None

    def __post_init__(self):
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")
        if self.epochs < 0 or self.batch_size < 1 or self.hidden_size < 1 or not self.learning_rate > 0:
            raise ValueError(f"invalid training configuration {self}")


@dataclass
class LstmModel:
    """Parameters of a stacked LSTM: input size 1, ``LAYER_COUNT`` layers of ``hidden_size``, dense output 1.

    ``params`` maps ``W{l}``/``b{l}`` (layer ``l`` = 1, 2) to the stacked gate
    weights ``(4H, D + H)`` and biases ``(4H,)``, and ``w_out``/``b_out`` to the
    output layer.
    """

    hidden_size: int
    params: dict
    meta: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, hidden_size: int) -> "LstmModel":
        return cls(hidden_size, {k: np.zeros(s) for k, s in param_shapes(hidden_size).items()})

    @classmethod
    def initialize(cls, hidden_size: int, seed: int) -> "LstmModel":
        """Uniform init in [-1/sqrt(H), 1/sqrt(H)]."""
        rng = np.random.default_rng(seed)
        k = 1.0 / math.sqrt(hidden_size)
        params = {name: rng.uniform(-k, k, shape) for name, shape in param_shapes(hidden_size).items()}
        return cls(hidden_size, params)

    @property
    def layer_specs(self) -> dict:
        return {"input_size": 1, "hidden_size": self.hidden_size, "layers": LAYER_COUNT,
                "between_layers": "relu", "output": "dense(1)+sigmoid", "gate_order": list(GATES)}

    def copy(self) -> "LstmModel":
        return LstmModel(self.hidden_size, {k: v.copy() for k, v in self.params.items()}, copy.deepcopy(self.meta))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in param_shapes(self.hidden_size)])

    def check_finite(self) -> None:
        for name, value in self.params.items():
            if not np.all(np.isfinite(value)):
                raise NumericError(f"parameter {name} is not finite")

    def to_dict(self) -> dict:
        return {
            "layer_specs": self.layer_specs,
            "params": {k: self.params[k].ravel().tolist() for k in param_shapes(self.hidden_size)},
            **self.meta,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LstmModel":
        hidden = int(doc["layer_specs"]["hidden_size"])
        shapes = param_shapes(hidden)
        params = {k: np.asarray(doc["params"][k], dtype=np.float64).reshape(s) for k, s in shapes.items()}
        meta = {k: v for k, v in doc.items() if k not in ("layer_specs", "params")}
        model = cls(hidden, params, meta)
        model.check_finite()
        return model

    def save(self, path) -> None:
        # repr-based float serialization in json round-trips float64 exactly
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "LstmModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def param_shapes(hidden_size: int) -> dict:
    H = hidden_size
    return {"W1": (4 * H, 1 + H), "b1": (4 * H,), "W2": (4 * H, 2 * H), "b2": (4 * H,),
            "w_out": (H,), "b_out": (1,)}


def sigmoid(z):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


@dataclass
class _LayerCache:
    inputs: np.ndarray  # (B, T, D)
    ifo: np.ndarray  # (B, T, 3H) input, forget, output gate activations
    g: np.ndarray
    c: np.ndarray  # (B, T, H)
    h: np.ndarray  # (B, T, H)


@dataclass
class ForwardCache:
    layers: list
    logit: np.ndarray  # (B,)


@dataclass
class GradientBundle:
    param_grads: dict
    input_grad: np.ndarray  # (B, T) or (T,) for a single window
    loss: float


def _layer_forward(W, b, inputs, first_timestep=0):
    B, T, D = inputs.shape
    H = W.shape[0] // 4
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = _LayerCache(inputs, np.empty((B, T, 3 * H)), *(np.empty((B, T, H)) for _ in range(3)))
    Wx, Wh = W[:, :D], W[:, D:]
    # input projection for all timesteps at once
    zx = inputs @ Wx.T + b
    for t in range(T):
        z = zx[:, t] + h @ Wh.T
        ifo = 0.5 * (1.0 + np.tanh(0.5 * z[:, :3 * H]))
        g = np.tanh(z[:, 3 * H:])
        c = ifo[:, H:2 * H] * c + ifo[:, :H] * g
        h = ifo[:, 2 * H:] * np.tanh(c)
        cache.ifo[:, t] = ifo
        cache.g[:, t], cache.c[:, t], cache.h[:, t] = g, c, h
    if not np.all(np.isfinite(cache.h)):
        bad = int(np.argwhere(~np.isfinite(cache.h))[0, 1])
        raise NumericError(f"non-finite hidden state at timestep {first_timestep + bad}")
    return cache


def _layer_backward(W, cache: _LayerCache, dh_seq):
    """Backprop through one layer. ``dh_seq`` is dLoss/dh_t from above, shape (B, T, H)."""
    B, T, D = cache.inputs.shape
    H = W.shape[0] // 4
    Wh = W[:, D:]
    dW = np.empty_like(W)
    dzs = np.empty((B, T, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    dz = np.empty((B, 4 * H))
    zeros = np.zeros((B, H))
    Wx = W[:, :D]
    for t in range(T - 1, -1, -1):
        ifo = cache.ifo[:, t]
        i, f, o = ifo[:, :H], ifo[:, H:2 * H], ifo[:, 2 * H:]
        g = cache.g[:, t]
        c_prev = cache.c[:, t - 1] if t > 0 else zeros
        dh = dh_seq[:, t] + dh_next
        tc = np.tanh(cache.c[:, t])
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz[:, :H] = dc * g
        dz[:, H:2 * H] = dc * c_prev
        dz[:, 2 * H:3 * H] = dh * tc
        dz[:, :3 * H] *= ifo * (1.0 - ifo)
        dz[:, 3 * H:] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dzs[:, t] = dz
        dh_next = dz @ Wh
    # weight gradients for all timesteps in one contraction
    h_prev = np.concatenate([np.zeros((B, 1, H)), cache.h[:, :-1]], axis=1)
    dW[:, :D] = np.einsum("btk,btd->kd", dzs, cache.inputs)
    dW[:, D:] = np.einsum("btk,bth->kh", dzs, h_prev)
    db = dzs.sum(axis=(0, 1))
    dinputs = dzs @ Wx
    return dW, db, dinputs


def forward_batch(model: LstmModel, X) -> tuple[np.ndarray, ForwardCache]:
    """Probabilities for a batch of windows ``X`` of shape (B, T)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected a (batch, T) array of windows")
    if not np.all(np.isfinite(X)):
        bad = int(np.argwhere(~np.isfinite(X))[0, 1])
        raise NumericError(f"non-finite input at timestep {bad}")
    p = model.params
    c1 = _layer_forward(p["W1"], p["b1"], X[:, :, None])
    c2 = _layer_forward(p["W2"], p["b2"], np.maximum(c1.h, 0.0))
    logit = c2.h[:, -1] @ p["w_out"] + p["b_out"][0]
    return sigmoid(logit), ForwardCache([c1, c2], logit)


def lstm_forward(model: LstmModel, window) -> tuple[float, ForwardCache]:
    prob, cache = forward_batch(model, np.asarray(window, dtype=np.float64)[None, :])
    return float(prob[0]), cache


def bce_loss(probability, label) -> float:
    p = min(max(float(probability), PROB_EPS), 1.0 - PROB_EPS)
    return -(label * math.log(p) + (1 - label) * math.log(1.0 - p))


def bce_from_logits(logit, y) -> np.ndarray:
    """Elementwise cross-entropy of sigmoid(logit) against ``y``, computed stably."""
    logit = np.asarray(logit, dtype=np.float64)
    return np.logaddexp(0.0, logit) - y * logit


def backward_batch(model: LstmModel, cache: ForwardCache, y) -> GradientBundle:
    """Gradients of the mean batch loss w.r.t. parameters, and of each window's own loss w.r.t. its inputs."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    p = model.params
    c1, c2 = cache.layers
    B, T, H = c2.h.shape
    dlogit = sigmoid(cache.logit) - y  # (B,)

    grads = {"w_out": c2.h[:, -1].T @ dlogit, "b_out": np.array([dlogit.sum()])}
    dh2 = np.zeros((B, T, H))
    dh2[:, -1] = np.outer(dlogit, p["w_out"])
    grads["W2"], grads["b2"], dr1 = _layer_backward(p["W2"], c2, dh2)
    dh1 = dr1 * (c1.h > 0)
    grads["W1"], grads["b1"], dx = _layer_backward(p["W1"], c1, dh1)
    for k in grads:
        grads[k] /= B
    loss = float(bce_from_logits(cache.logit, y).mean())
    return GradientBundle(grads, dx[:, :, 0], loss)


def backward(model: LstmModel, cache: ForwardCache, window, label) -> GradientBundle:
    bundle = backward_batch(model, cache, [label])
    bundle.input_grad = bundle.input_grad[0]
    return bundle


def input_gradients(model: LstmModel, X, y, chunk: int = 2048) -> np.ndarray:
    """dLoss/dx for every window in ``X`` against its label in ``y``; shape (B, T)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    out = np.empty_like(X)
    for s in range(0, X.shape[0], chunk):
        _, cache = forward_batch(model, X[s:s + chunk])
        out[s:s + chunk] = backward_batch(model, cache, y[s:s + chunk]).input_grad
    return out


def predict_proba(model: LstmModel, X, chunk: int = 4096) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    out = np.empty(X.shape[0])
    for s in range(0, X.shape[0], chunk):
        out[s:s + chunk] = forward_batch(model, X[s:s + chunk])[0]
    return out


def predict(model: LstmModel, window) -> tuple[float, int]:
    """Probability and hard label; ties at 0.5 count as occupied."""
    prob, _ = lstm_forward(model, window)
    return prob, int(prob >= 0.5)


def train(model: LstmModel, X, y, config: TrainConfig, log: Optional[Callable] = None):
    """Mini-batch SGD on mean cross-entropy. Returns a trained copy and per-epoch mean losses.

    Batches are drawn from a permutation seeded by ``config.seed``, so repeated
    runs are bit-identical.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    model = model.copy()
    rng = np.random.default_rng(config.seed)
    history = []
    n = X.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                for s in range(0, n, config.batch_size):
                    idx = order[s:s + config.batch_size]
                    _, cache = forward_batch(model, X[idx])
                    bundle = backward_batch(model, cache, y[idx])
                    scale = config.learning_rate
                    if config.clip_norm is not None:
                        norm = math.sqrt(sum(float(np.sum(g * g)) for g in bundle.param_grads.values()))
                        if norm > config.clip_norm:
                            scale *= config.clip_norm / norm
                    for k, grad in bundle.param_grads.items():
                        model.params[k] -= scale * grad
                    total += bundle.loss * idx.size
        except NumericError as exc:
            raise NumericError(f"training diverged at epoch {epoch}: {exc}") from None
        mean_loss = total / n
        if not (math.isfinite(mean_loss) and all(np.isfinite(v).all() for v in model.params.values())):
            raise NumericError(f"training diverged at epoch {epoch}")
        history.append(mean_loss)
        if log is not None:
            log(epoch, mean_loss)
    model.check_finite()
    model.meta = {"seed": config.seed, "train_config": asdict(config)}
    return model, history


def _loss_at(model: LstmModel, window, label) -> float:
    _, cache = forward_batch(model, np.asarray(window, dtype=np.float64)[None, :])
    return float(bce_from_logits(cache.logit, label)[0])


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst: str

    def __float__(self):
        return float(self.max_rel_error)


def grad_check(model: LstmModel, window, label, step: float = 1e-5, floor: float = 1e-6,
               backward_fn: Optional[Callable] = None) -> GradCheckResult:
    """Compare analytic gradients against central differences on every parameter and input.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    ``backward_fn`` replaces :func:`backward` (used to test the checker itself).
    """
    window = np.asarray(window, dtype=np.float64)
    _, cache = lstm_forward(model, window)
    bundle = (backward_fn or backward)(model, cache, window, label)
    worst_err, worst_name = 0.0, ""

    def record(name, analytic, numeric):
        nonlocal worst_err, worst_name
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        if err > worst_err or not worst_name:
            worst_err, worst_name = err, name

    probe = model.copy()
    for key, value in probe.params.items():
        for idx in np.ndindex(value.shape):
            orig = value[idx]
            value[idx] = orig + step
            up = _loss_at(probe, window, label)
            value[idx] = orig - step
            down = _loss_at(probe, window, label)
            value[idx] = orig
            record(f"{key}{list(idx)}", bundle.param_grads[key][idx], (up - down) / (2 * step))
    for t in range(window.size):
        w = window.copy()
        w[t] += step
        up = _loss_at(model, w, label)
        w[t] -= 2 * step
        down = _loss_at(model, w, label)
        record(f"x[{t}]", bundle.input_grad[t], (up - down) / (2 * step))
    return GradCheckResult(worst_err, worst_name)
