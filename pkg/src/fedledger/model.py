"""Small MLP binary classifier over a flat parameter vector.

The flat layout ((W, b) per layer, row-major) makes model averaging and
content-addressed hashing elsewhere in the package trivial. All operations
are pure with value semantics on the parameters; nothing here keeps state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Dataset

PROB_FLOOR = 1e-12


def param_count(layer_dims: Sequence[int]) -> int:
    return sum((din + 1) * dout for din, dout in zip(layer_dims, layer_dims[1:]))


@dataclass(frozen=True)
class ModelParams:
    """Flat real-valued parameters of an MLP with sigmoid output.

    layer_dims runs input width -> hidden widths -> 1. version tracks the
    federation round the parameters belong to.
    """

    layer_dims: tuple[int, ...]
    weights: np.ndarray
    version: int = 0

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError("layer_dims needs at least input and output widths >= 1")
        if dims[-1] != 1:
            raise ValueError("output width must be 1 (binary classifier)")
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64).ravel())
        if w.size != param_count(dims):
            raise ValueError(
                f"weights length {w.size} does not match layer_dims {dims} "
                f"(expected {param_count(dims)})"
            )
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "weights", w)

    @property
    def input_width(self) -> int:
        return self.layer_dims[0]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 1
    batch_size: int = 32
    weight_decay: float = 0.001
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    loss: float
    f1: float
    precision: float


def init_params(layer_dims: Sequence[int], seed: int, scale: float = 0.1) -> ModelParams:
    """Seeded small-uniform initialization in [-scale, scale)."""
    dims = tuple(int(d) for d in layer_dims)
    rng = np.random.default_rng(seed)
    weights = rng.uniform(-scale, scale, size=param_count(dims))
    return ModelParams(dims, weights, version=0)


def _layer_views(dims: tuple[int, ...], flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of a flat vector as per-layer (W, b) pairs; no copies."""
    out = []
    offset = 0
    for din, dout in zip(dims, dims[1:]):
        w = flat[offset : offset + din * dout].reshape(din, dout)
        offset += din * dout
        b = flat[offset : offset + dout]
        offset += dout
        out.append((w, b))
    return out


def _layers(params: ModelParams) -> list[tuple[np.ndarray, np.ndarray]]:
    return _layer_views(params.layer_dims, params.weights)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward(params: ModelParams, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """ReLU hidden layers, sigmoid output. Returns activations and probabilities."""
    layers = _layers(params)
    activations = [x]
    a = x
    for w, b in layers[:-1]:
        a = np.maximum(a @ w + b, 0.0)
        activations.append(a)
    w_out, b_out = layers[-1]
    z = (a @ w_out + b_out).ravel()
    return activations, _sigmoid(z)


def _as_matrix(params: ModelParams, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.shape[1] != params.input_width:
        raise ValueError(
            f"feature width {x.shape[1]} does not match model input "
            f"width {params.input_width}"
        )
    return x


def predict(params: ModelParams, features: np.ndarray) -> float:
    """Probability of the positive (fraud) class for one feature vector."""
    x = _as_matrix(params, features)
    if x.shape[0] != 1:
        raise ValueError("predict takes a single feature vector; see predict_batch")
    return float(_forward(params, x)[1][0])


def predict_batch(params: ModelParams, features: np.ndarray) -> np.ndarray:
    return _forward(params, _as_matrix(params, features))[1]


def loss(params: ModelParams, data: Dataset, weight_decay: float = 0.0) -> float:
    """Mean binary cross-entropy, plus an optional 0.5*wd*||w||^2 penalty.

    Probabilities are clamped away from 0 and 1 so the value stays finite.
    """
    if len(data) == 0:
        raise ValueError("dataset is empty")
    probs = predict_batch(params, data.features)
    probs = np.clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)
    y = data.labels
    bce = -np.mean(y * np.log(probs) + (1 - y) * np.log(1.0 - probs))
    if weight_decay:
        bce += 0.5 * weight_decay * float(params.weights @ params.weights)
    return float(bce)


def gradient(params: ModelParams, batch: Dataset, weight_decay: float = 0.0) -> np.ndarray:
    """Gradient of loss() over the batch, in the flat parameter layout.

    Backpropagation with ReLU'(0) taken as 0. The weight-decay term is
    folded in here (classical SGD + L2, not decoupled).
    """
    if len(batch) == 0:
        raise ValueError("batch is empty")
    x = _as_matrix(params, batch.features)
    m = x.shape[0]
    layers = _layers(params)
    activations, probs = _forward(params, x)

    grad = np.zeros_like(params.weights)
    # these views alias `grad`, so writing into them fills the flat vector
    grad_layers = _layer_views(params.layer_dims, grad)
    delta = ((probs - batch.labels) / m).reshape(m, 1)
    for li in range(len(layers) - 1, -1, -1):
        w, _ = layers[li]
        gw, gb = grad_layers[li]
        gw[...] = activations[li].T @ delta
        gb[...] = delta.sum(axis=0)
        if li > 0:
            delta = (delta @ w.T) * (activations[li] > 0)
    if weight_decay:
        grad += weight_decay * params.weights
    return grad


def local_train(params: ModelParams, data: Dataset, cfg: TrainConfig) -> ModelParams:
    """Mini-batch SGD: epochs x ceil(n/batch_size) steps w <- w - lr*grad.

    Batches come from a seeded shuffle each epoch; identical inputs and seed
    give bitwise-identical outputs. The input params are left untouched and
    the result's version is bumped by one.
    """
    if len(data) == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    n = len(data)
    weights = params.weights.copy()
    current = ModelParams(params.layer_dims, weights, params.version)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = data.subset(order[start : start + cfg.batch_size])
            g = gradient(current, batch, cfg.weight_decay)
            weights = weights - cfg.learning_rate * g
            current = ModelParams(params.layer_dims, weights, params.version)
    return ModelParams(params.layer_dims, weights, params.version + 1)


def evaluate(params: ModelParams, data: Dataset, threshold: float = 0.5) -> Metrics:
    """Thresholded classification metrics; fraud (label 1) is the positive class.

    Precision and F1 fall back to 0 when their denominators vanish.
    """
    if len(data) == 0:
        raise ValueError("dataset is empty")
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie strictly between 0 and 1")
    probs = predict_batch(params, data.features)
    preds = probs >= threshold
    y = data.labels.astype(bool)
    tp = int(np.count_nonzero(preds & y))
    fp = int(np.count_nonzero(preds & ~y))
    fn = int(np.count_nonzero(~preds & y))
    accuracy = float(np.count_nonzero(preds == y)) / len(data)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics(accuracy, loss(params, data), f1, precision)


def average(models: Sequence[ModelParams]) -> ModelParams:
    """Uniform average of parameter vectors; the unit step of aggregation."""
    if not models:
        raise ValueError("cannot average zero models")
    dims = models[0].layer_dims
    for m in models[1:]:
        if m.layer_dims != dims:
            raise ValueError("models must share layer_dims to be averaged")
    stacked = np.stack([m.weights for m in models])
    return ModelParams(dims, stacked.mean(axis=0), models[0].version)
