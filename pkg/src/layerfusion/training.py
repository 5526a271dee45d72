"""Gradient descent with the constraints used while retraining a compressed net."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .net import Dataset, Gradients, NetworkModel, loss_and_grad


@dataclass
class FrozenGroup:
    trainable: int
    frozen: list[int]
    gamma: float


@dataclass
class TrainingConstraints:
    """What an SGD step may change.

    ``tied_groups`` share one averaged gradient, ``frozen_groups`` hold some
    layers fixed while their partner takes a gamma-weighted gradient,
    ``masks`` pin pruned weights at zero (True = keep) and ``trainable``,
    when set, restricts updates to those layer indices.
    """

    tied_groups: list[list[int]] = field(default_factory=list)
    frozen_groups: list[FrozenGroup] = field(default_factory=list)
    masks: dict[int, np.ndarray] = field(default_factory=dict)
    trainable: set[int] | None = None

    def is_empty(self) -> bool:
        return not (self.tied_groups or self.frozen_groups or self.masks) and self.trainable is None


def combine_gradients(g_frozen, g_trainable, gamma: float):
    """Gradient for the trainable member of a frozen pair."""
    return gamma * g_frozen + (1.0 - gamma) * g_trainable


def apply_constraints(model: NetworkModel, constraints: TrainingConstraints) -> NetworkModel:
    """Make a model satisfy its constraints: tie groups to their mean, zero masked weights."""
    out = model.copy()
    for group in constraints.tied_groups:
        w = np.mean(np.stack([model.layers[k].weight for k in group]), axis=0)
        b = np.mean(np.stack([model.layers[k].bias for k in group]), axis=0)
        for k in group:
            out.layers[k].weight = w.copy()
            out.layers[k].bias = b.copy()
    for k, mask in constraints.masks.items():
        out.layers[k].weight = np.where(mask, out.layers[k].weight, 0.0)
    return out


def sgd_step(model: NetworkModel, grads: Gradients, lr: float,
             constraints: TrainingConstraints | None = None,
             clip_norm: float | None = None) -> NetworkModel:
    if lr <= 0:
        raise ValidationError("learning rate must be positive")
    constraints = constraints or TrainingConstraints()
    if clip_norm is not None:
        norm = grads.norm()
        if norm > clip_norm:
            grads = grads.scaled(clip_norm / norm)
    gw = list(grads.weights)
    gb = list(grads.biases)
    frozen = set()

    for group in constraints.tied_groups:
        mw = np.mean(np.stack([gw[k] for k in group]), axis=0)
        mb = np.mean(np.stack([gb[k] for k in group]), axis=0)
        for k in group:
            gw[k] = mw
            gb[k] = mb

    for fg in constraints.frozen_groups:
        fw = np.mean(np.stack([grads.weights[k] for k in fg.frozen]), axis=0)
        fb = np.mean(np.stack([grads.biases[k] for k in fg.frozen]), axis=0)
        gw[fg.trainable] = combine_gradients(fw, grads.weights[fg.trainable], fg.gamma)
        gb[fg.trainable] = combine_gradients(fb, grads.biases[fg.trainable], fg.gamma)
        frozen.update(fg.frozen)

    out = model.copy()
    for k, layer in enumerate(out.layers):
        if k in frozen:
            continue
        if constraints.trainable is not None and k not in constraints.trainable:
            continue
        layer.weight = layer.weight - lr * gw[k]
        layer.bias = layer.bias - lr * gb[k]
        mask = constraints.masks.get(k)
        if mask is not None:
            layer.weight = np.where(mask, layer.weight, 0.0)
    return out


def fit(model: NetworkModel, data: Dataset, epochs: int, lr: float = 0.05,
        constraints: TrainingConstraints | None = None, batch_size: int | None = None,
        seed: int = 0, clip_norm: float | None = 5.0, on_epoch=None) -> NetworkModel:
    """Plain SGD for ``epochs`` passes over ``data``.

    Full batch unless ``batch_size`` is given, in which case each epoch uses
    a shuffle drawn from ``seed``. ``on_epoch(epoch, model, loss)`` is called
    after every epoch with the mean training loss of that epoch.
    """
    rng = np.random.default_rng(seed)
    n = len(data)
    for epoch in range(epochs):
        if batch_size is None or batch_size >= n:
            batches = [np.arange(n)]
        else:
            order = rng.permutation(n)
            batches = [order[s:s + batch_size] for s in range(0, n, batch_size)]
        total = 0.0
        for idx in batches:
            loss, grads = loss_and_grad(model, data.inputs[idx], data.targets[idx])
            total += loss * idx.size
            model = sgd_step(model, grads, lr, constraints, clip_norm)
        if on_epoch is not None:
            on_epoch(epoch, model, total / n)
    return model
