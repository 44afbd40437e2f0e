"""Dense ReLU network: initialization, forward pass, cross-entropy and gradients.

All arithmetic is float64. Parameters are plain numpy arrays; the training
loop packs them into a single flat vector (see :func:`pack`) so the kernels
can update everything in one sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from cumlr._backend import kernels
from cumlr.errors import ConfigError, DataError, ShapeError

if TYPE_CHECKING:
    from cumlr.data import Dataset

DEFAULT_LAYER_SIZES = (784, 256, 10)


@dataclass
class MlpParams:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    init_seed: int | None = None

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        _check_layout(self.layer_sizes, self.weights, self.biases)

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpParams":
        return MlpParams(self.layer_sizes, [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.init_seed)


@dataclass
class GradientSet:
    """Gradients with the same layout as :class:`MlpParams`."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        _check_layout(self.layer_sizes, self.weights, self.biases)


@dataclass
class Batch:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int | None = field(default=None)

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ShapeError(f"batch inputs must be 2-D, got shape {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ShapeError(
                f"{self.inputs.shape[0]} input rows but labels have shape {self.labels.shape}")
        if self.inputs.size and not (np.all(self.inputs >= -1.0) and np.all(self.inputs <= 1.0)):
            raise DataError("batch features must lie in [-1, 1]")


def _check_layout(sizes, weights, biases):
    if len(weights) != len(sizes) - 1 or len(biases) != len(sizes) - 1:
        raise ShapeError(f"{len(sizes)} layer sizes need {len(sizes) - 1} weight/bias pairs")
    for i, (w, b) in enumerate(zip(weights, biases)):
        if w.shape != (sizes[i + 1], sizes[i]):
            raise ShapeError(f"weights[{i}] has shape {w.shape}, expected {(sizes[i + 1], sizes[i])}")
        if b.shape != (sizes[i + 1],):
            raise ShapeError(f"biases[{i}] has shape {b.shape}, expected {(sizes[i + 1],)}")


def validate_layer_sizes(layer_sizes) -> tuple[int, ...]:
    sizes = tuple(layer_sizes)
    if len(sizes) < 2:
        raise ConfigError(f"need at least input and output sizes, got {list(sizes)}")
    if any(int(s) != s or s <= 0 for s in sizes):
        raise ConfigError(f"layer sizes must be positive integers, got {list(sizes)}")
    return tuple(int(s) for s in sizes)


def init_mlp(layer_sizes=DEFAULT_LAYER_SIZES, seed: int = 0) -> MlpParams:
    """Fan-in scaled uniform weights in ``±sqrt(6 / fan_in)``, zero biases."""
    sizes = validate_layer_sizes(layer_sizes)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(sizes, weights, biases, init_seed=seed)


def pack(params) -> np.ndarray:
    """Flatten weights and biases into one vector (layer by layer, W then b)."""
    parts = []
    for w, b in zip(params.weights, params.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.ascontiguousarray(np.concatenate(parts), dtype=np.float64)


def unpack(flat: np.ndarray, layer_sizes) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Split a flat vector into per-layer copies of (weights, biases)."""
    sizes = tuple(layer_sizes)
    expected = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    if flat.shape != (expected,):
        raise ShapeError(f"flat vector has shape {flat.shape}, expected ({expected},)")
    weights, biases = [], []
    off = 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[off:off + a * b].reshape(b, a).copy())
        off += a * b
        biases.append(flat[off:off + b].copy())
        off += b
    return weights, biases


def params_from_flat(flat, layer_sizes, init_seed=None) -> MlpParams:
    w, b = unpack(flat, layer_sizes)
    return MlpParams(tuple(layer_sizes), w, b, init_seed)


def _check_batch(params: MlpParams, batch: Batch):
    if batch.inputs.shape[1] != params.layer_sizes[0]:
        raise ShapeError(
            f"batch has {batch.inputs.shape[1]} features, network expects {params.layer_sizes[0]}")


def _check_labels(labels: np.ndarray, num_classes: int):
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataError(f"label indices must lie in [0, {num_classes})")


def forward(params: MlpParams, batch: Batch):
    """Return ``(logits, cache)``.

    Hidden layers are affine followed by ReLU; the output layer is affine
    only. ``cache`` holds the pre-activation of every layer, last one being
    the logits themselves.
    """
    _check_batch(params, batch)
    h = batch.inputs
    cache = []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        cache.append(z)
        h = np.maximum(z, 0.0) if i < last else z
    return h, cache


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy via log-sum-exp; ``inf`` on non-finite logits."""
    if not np.all(np.isfinite(logits)):
        return math.inf
    mx = logits.max(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(np.exp(logits - mx).sum(axis=1))
    return float(np.mean(lse - logits[np.arange(len(labels)), labels]))


def loss_and_grad(params: MlpParams, batch: Batch) -> tuple[float, GradientSet]:
    """Mean cross-entropy over the batch and its exact gradient.

    A diverged network (non-finite logits) reports ``inf`` loss and NaN
    gradients instead of raising.
    """
    _check_batch(params, batch)
    _check_labels(batch.labels, params.layer_sizes[-1])
    theta = pack(params)
    grad = np.zeros_like(theta)
    loss = kernels.loss_grad(theta, grad, list(params.layer_sizes), batch.inputs, batch.labels)
    if not math.isfinite(loss):
        grad.fill(np.nan)
        loss = math.inf
    gw, gb = unpack(grad, params.layer_sizes)
    return float(loss), GradientSet(params.layer_sizes, gw, gb)


def evaluate(params: MlpParams, dataset: "Dataset") -> tuple[float, float]:
    """Mean loss and top-1 accuracy over the held-out split, forward only."""
    if dataset.eval_inputs.shape[0] == 0:
        raise DataError("evaluation split is empty")
    return evaluate_flat(pack(params), params.layer_sizes, dataset.eval_inputs, dataset.eval_labels)


def evaluate_flat(theta, layer_sizes, inputs, labels) -> tuple[float, float]:
    if inputs.shape[0] == 0:
        raise DataError("evaluation split is empty")
    if inputs.shape[1] != layer_sizes[0]:
        raise ShapeError(f"data has {inputs.shape[1]} features, network expects {layer_sizes[0]}")
    _check_labels(labels, layer_sizes[-1])
    loss, correct = kernels.eval_loss(theta, list(layer_sizes), inputs, labels)
    return float(loss), correct / inputs.shape[0]
