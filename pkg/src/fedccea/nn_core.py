"""Dense MLP substrate: init, forward, cross-entropy SGD, accuracy.

All arithmetic is float64 and every operation is a pure function of its
inputs, so identical (spec, seed, data, hyperparameters) reproduce trained
parameters bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import LabeledDataset
from .rng import RngStream


@dataclass(frozen=True)
class MLPSpec:
    """Layer widths from input dim to class count; ReLU hidden, softmax output."""

    layer_sizes: tuple[int, ...]
    hidden_activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("layer_sizes needs at least input and output dims")
        if any(s < 1 for s in sizes):
            raise ValueError("all layer sizes must be positive")
        if self.hidden_activation != "relu":
            raise ValueError(f"unsupported hidden activation {self.hidden_activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]


@dataclass
class MLPParams:
    """Per-layer weight matrices (out x in) and bias vectors."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    def copy(self) -> MLPParams:
        return MLPParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def params_equal(a: MLPParams, b: MLPParams) -> bool:
    return (
        a.n_layers == b.n_layers
        and all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
        and all(np.array_equal(x, y) for x, y in zip(a.biases, b.biases))
    )


def init_mlp(spec: MLPSpec, rng: RngStream) -> MLPParams:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLPParams(weights, biases)


def _check_batch(params: MLPParams, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != params.input_dim:
        raise ValueError(
            f"batch shape {batch.shape} incompatible with input dim {params.input_dim}"
        )
    return batch


def _forward_trace(params: MLPParams, batch: np.ndarray):
    """Activations per layer plus output log-probabilities."""
    activations = [batch]
    a = batch
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        a = np.maximum(a @ w.T + b, 0.0)
        activations.append(a)
    logits = a @ params.weights[-1].T + params.biases[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return activations, log_probs


def forward(params: MLPParams, batch: np.ndarray) -> np.ndarray:
    """Class probabilities, one row per sample; rows sum to 1."""
    batch = _check_batch(params, batch)
    _, log_probs = _forward_trace(params, batch)
    return np.exp(log_probs)


def cross_entropy_loss(params: MLPParams, batch: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of the true classes."""
    batch = _check_batch(params, batch)
    _, log_probs = _forward_trace(params, batch)
    return float(-log_probs[np.arange(len(labels)), labels].mean())


def loss_gradients(
    params: MLPParams, batch: np.ndarray, labels: np.ndarray
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Backprop the mean cross-entropy; returns (loss, dweights, dbiases)."""
    batch = _check_batch(params, batch)
    m = batch.shape[0]
    activations, log_probs = _forward_trace(params, batch)
    loss = float(-log_probs[np.arange(m), labels].mean())

    delta = np.exp(log_probs)
    delta[np.arange(m), labels] -= 1.0
    delta /= m

    dweights = [np.empty(0)] * params.n_layers
    dbiases = [np.empty(0)] * params.n_layers
    for layer in range(params.n_layers - 1, -1, -1):
        dweights[layer] = delta.T @ activations[layer]
        dbiases[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ params.weights[layer]) * (activations[layer] > 0.0)
    return loss, dweights, dbiases


def sgd_train(
    params: MLPParams,
    data: LabeledDataset,
    epochs: int,
    batch_size: int,
    lr: float,
) -> MLPParams:
    """Mini-batch SGD over the dataset's fixed stored order.

    Batches are never reshuffled and a short final batch is kept, so the
    update sequence is fully determined by the inputs.
    """
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    out = params.copy()
    n = len(data)
    for _ in range(epochs):
        for start in range(0, n, batch_size):
            stop = min(start + batch_size, n)
            _, dws, dbs = loss_gradients(out, data.features[start:stop], data.labels[start:stop])
            for w, b, dw, db in zip(out.weights, out.biases, dws, dbs):
                w -= lr * dw
                b -= lr * db
    return out


def evaluate_accuracy(params: MLPParams, test: LabeledDataset) -> float:
    """Fraction of samples whose most probable class matches the label.

    Argmax ties resolve to the lowest class index.
    """
    if len(test) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    predictions = forward(params, test.features).argmax(axis=1)
    return float((predictions == test.labels).mean())
