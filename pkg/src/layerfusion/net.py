"""Dense feed-forward networks with exact backpropagation.

Layers act on row vectors: ``z_next = g(z @ W + b)`` with ``W`` of shape
``(fan_in, fan_out)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ValidationError

ACTIVATIONS = ("tanh", "relu", "identity")
LOSSES = ("mse", "cross_entropy_softmax")


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).ravel()
        if self.weight.ndim != 2:
            raise ValidationError("layer weight must be 2-D")
        if self.bias.shape != (self.weight.shape[1],):
            raise ValidationError(
                f"bias shape {self.bias.shape} does not match weight {self.weight.shape}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")

    @property
    def shape(self):
        return self.weight.shape

    @property
    def n_params(self) -> int:
        return self.weight.size + self.bias.size

    def copy(self) -> "Layer":
        return Layer(self.weight.copy(), self.bias.copy(), self.activation)


@dataclass
class NetworkModel:
    layers: list[Layer]
    loss: str = "cross_entropy_softmax"

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValidationError(f"unknown loss {self.loss!r}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.shape[1] != nxt.shape[0]:
                raise ValidationError(
                    f"layer shapes do not compose: {prev.shape} then {nxt.shape}"
                )
        if self.loss == "cross_entropy_softmax" and self.layers:
            if self.layers[-1].activation != "identity":
                raise ValidationError("cross-entropy models need an identity output layer")

    def __len__(self):
        return len(self.layers)

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].shape[1]

    def copy(self) -> "NetworkModel":
        return NetworkModel([layer.copy() for layer in self.layers], self.loss)

    def with_layers(self, layers: Sequence[Layer]) -> "NetworkModel":
        return NetworkModel(list(layers), self.loss)


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    labels: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=np.float64))
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValidationError("inputs and targets must have equal counts")
        if self.labels is None and self.targets.shape[1] > 1:
            onehot = np.all((self.targets == 0) | (self.targets == 1), axis=1)
            if np.all(onehot) and np.all(self.targets.sum(axis=1) == 1):
                self.labels = self.targets.argmax(axis=1)

    def __len__(self):
        return self.inputs.shape[0]


def init_model(sizes: Sequence[int], activation="tanh", loss="cross_entropy_softmax",
               seed=0, scale=None) -> NetworkModel:
    """Random network with ``len(sizes) - 1`` layers (Xavier-style scaling)."""
    rng = np.random.default_rng(seed)
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        std = scale if scale is not None else 1.0 / np.sqrt(fan_in)
        act = "identity" if k == len(sizes) - 2 else activation
        layers.append(Layer(rng.normal(0.0, std, (fan_in, fan_out)), np.zeros(fan_out), act))
    return NetworkModel(layers, loss)


def _activate(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    return x


def _activate_grad(kind: str, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - post * post
    if kind == "relu":
        return (pre > 0.0).astype(np.float64)
    return np.ones_like(pre)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # z @ W + b for each layer
    output: np.ndarray


def forward(model: NetworkModel, x) -> tuple[np.ndarray, ForwardCache]:
    z = np.asarray(x, dtype=np.float64)
    squeeze = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[1] != model.input_dim:
        raise ValidationError(
            f"input dimension {z.shape[1]} does not match model input {model.input_dim}"
        )
    inputs, pres = [], []
    for layer in model.layers:
        inputs.append(z)
        a = z @ layer.weight + layer.bias
        pres.append(a)
        z = _activate(layer.activation, a)
    cache = ForwardCache(inputs, pres, z)
    return (z[0] if squeeze else z), cache


def predict(model: NetworkModel, x) -> np.ndarray:
    return forward(model, x)[0]


def _softmax(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def loss_value(model: NetworkModel, output: np.ndarray, targets: np.ndarray) -> float:
    n = output.shape[0]
    if model.loss == "mse":
        return float(np.sum((output - targets) ** 2) / (n * output.shape[1]))
    shifted = output - output.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    return float(-np.sum(targets * logp) / n)


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def norm(self) -> float:
        sq = sum(float(np.sum(g * g)) for g in self.weights)
        sq += sum(float(np.sum(g * g)) for g in self.biases)
        return float(np.sqrt(sq))

    def scaled(self, factor: float) -> "Gradients":
        return Gradients([g * factor for g in self.weights], [g * factor for g in self.biases])


def loss_and_grad(model: NetworkModel, inputs, targets) -> tuple[float, Gradients]:
    """Mean loss over the batch and its exact gradient for every parameter."""
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    out, cache = forward(model, np.atleast_2d(inputs))
    n = out.shape[0]
    if n == 0:
        raise ValidationError("empty batch")
    loss = loss_value(model, out, targets)
    if model.loss == "mse":
        delta = 2.0 * (out - targets) / (n * out.shape[1])
    else:
        delta = (_softmax(out) * targets.sum(axis=1, keepdims=True) - targets) / n

    gw = [None] * len(model.layers)
    gb = [None] * len(model.layers)
    for k in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[k]
        post = cache.output if k == len(model.layers) - 1 else cache.inputs[k + 1]
        if not (model.loss == "cross_entropy_softmax" and k == len(model.layers) - 1):
            delta = delta * _activate_grad(layer.activation, cache.pre[k], post)
        gw[k] = cache.inputs[k].T @ delta
        gb[k] = delta.sum(axis=0)
        delta = delta @ layer.weight.T
    return loss, Gradients(gw, gb)


def accuracy(model: NetworkModel, data: Dataset) -> float:
    if data.labels is None:
        raise ValidationError("accuracy needs class labels")
    out = predict(model, data.inputs)
    return float(np.mean(out.argmax(axis=1) == data.labels))


def effective_params(model: NetworkModel, masks=None, tied_groups=()) -> int:
    """Parameter count with pruned zeros and tied duplicates excluded."""
    dropped = set()
    for group in tied_groups:
        dropped.update(sorted(group)[1:])
    total = 0
    for k, layer in enumerate(model.layers):
        if k in dropped:
            continue
        if masks is not None and masks.get(k) is not None:
            total += int(np.count_nonzero(masks[k])) + layer.bias.size
        else:
            total += layer.n_params
    return total


def replace_layer(model: NetworkModel, index: int, **changes) -> NetworkModel:
    layers = [layer.copy() for layer in model.layers]
    layers[index] = replace(layers[index], **changes)
    return model.with_layers(layers)
