"""Pick the most similar layer pairs and merge them."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .align import align_unequal
from .errors import NothingToRankError, ValidationError
from .metrics import SimilarityReport
from .net import Layer, NetworkModel
from .rng import keyed_uniform
from .training import FrozenGroup, TrainingConstraints

__all__ = [
    "FusionPair",
    "FusionPlan",
    "FusedModel",
    "align_unequal",
    "js_gamma",
    "select_top_k",
    "fuse",
    "fuse_mean",
    "fuse_freeze",
    "fuse_mix",
    "mix_mask",
    "plan_constraints",
    "components",
]

STRATEGIES = ("mean", "freeze", "mix")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class FusionPair:
    i: int
    j: int
    distance: float
    gamma: float | None = None
    frozen: int | None = None  # member kept fixed under the freeze strategy


@dataclass
class FusionPlan:
    pairs: list[FusionPair]
    strategy: str = "mean"
    fraction: float = 0.0
    seed: int = 0
    mix_probability: float = 0.5
    n_layers: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown fusion strategy {self.strategy!r}")
        if not 0.0 <= self.mix_probability <= 1.0:
            raise ValidationError("mix_probability must lie in [0, 1]")
        for pair in self.pairs:
            if pair.i >= pair.j:
                raise ValidationError(f"pair ({pair.i}, {pair.j}) must have i < j")

    def to_json(self) -> str:
        doc = {
            "strategy": self.strategy,
            "fraction": self.fraction,
            "seed": self.seed,
            "pairs": [
                {"i": p.i, "j": p.j, "distance": p.distance, "gamma": p.gamma,
                 "frozen": p.frozen}
                for p in self.pairs
            ],
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str, mix_probability: float = 0.5, n_layers: int = 0):
        doc = json.loads(text)
        pairs = [FusionPair(int(p["i"]), int(p["j"]), float(p["distance"]),
                            None if p.get("gamma") is None else float(p["gamma"]),
                            None if p.get("frozen") is None else int(p["frozen"]))
                 for p in doc["pairs"]]
        return cls(pairs, doc["strategy"], float(doc["fraction"]), int(doc["seed"]),
                   mix_probability, n_layers)


@dataclass
class FusedModel:
    model: NetworkModel
    provenance: dict[int, set[int]] = field(default_factory=dict)


def js_gamma(w_i, w_j) -> float:
    """Mean row-wise Jensen-Shannon divergence between softmaxed weights (nats)."""
    a = linalg.as_matrix(w_i)
    b = linalg.as_matrix(w_j)
    if a.shape != b.shape:
        fa, fb = align_unequal(a.ravel(), b.ravel())
        shape = (a if a.size <= b.size else b).shape
        a, b = fa.reshape(shape), fb.reshape(shape)
    pa = linalg.row_softmax(a)
    pb = linalg.row_softmax(b)
    m = 0.5 * (pa + pb)
    with np.errstate(divide="ignore", invalid="ignore"):
        ka = np.where(pa > 0, pa * np.log(pa / m), 0.0).sum(axis=1)
        kb = np.where(pb > 0, pb * np.log(pb / m), 0.0).sum(axis=1)
    value = float(np.mean(0.5 * (ka + kb)))
    return min(max(value, 0.0), math.log(2.0))


def frozen_member(i: int, j: int, n_layers: int) -> int:
    """The layer of a pair nearer the middle of the network (lower index on ties)."""
    mid = n_layers / 2.0
    return i if abs(i - mid) <= abs(j - mid) else j


def select_top_k(report: SimilarityReport, fraction: float, *, k: int | None = None,
                 model: NetworkModel | None = None, strategy: str = "mean",
                 seed: int = 0, mix_probability: float = 0.5) -> FusionPlan:
    """The ``round(L * fraction)`` closest pairs, ascending by distance.

    Ties are broken by ``(i, j)``. ``k`` overrides the fraction-derived count.
    When ``model`` is given each pair carries its Jensen-Shannon gamma.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValidationError("fraction must lie in [0, 1]")
    candidates = report.pairs()
    if not candidates:
        raise NothingToRankError("similarity report has no evaluated pairs")
    n = report.n_layers
    if k is None:
        k = round_half_up(n * fraction)
    k = max(0, min(k, len(candidates)))
    chosen = sorted(candidates, key=lambda t: (t[2], t[0], t[1]))[:k]
    pairs = []
    for i, j, d in chosen:
        gamma = None
        if model is not None:
            gamma = js_gamma(model.layers[i].weight, model.layers[j].weight)
        pairs.append(FusionPair(i, j, d, gamma, frozen_member(i, j, n)))
    return FusionPlan(pairs, strategy, fraction, seed, mix_probability, n)


def components(pairs, n_layers: int) -> list[list[int]]:
    """Connected components (size >= 2) of the pair graph, each sorted."""
    parent = list(range(n_layers))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for p in pairs:
        ri, rj = find(p.i), find(p.j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for x in range(n_layers):
        groups.setdefault(find(x), []).append(x)
    return sorted((g for g in groups.values() if len(g) > 1), key=lambda g: g[0])


def _check_group(model: NetworkModel, group):
    first = model.layers[group[0]]
    for k in group[1:]:
        other = model.layers[k]
        if other.activation != first.activation:
            raise ValidationError(
                f"layers {group[0]} and {k} have different activations"
            )
        if other.shape != first.shape:
            raise ValidationError(
                f"layers {group[0]} and {k} have incompatible shapes {first.shape} / {other.shape}"
            )


def _rebuild(model: NetworkModel, groups, merged: dict[int, Layer]) -> FusedModel:
    drop = set()
    for g in groups:
        drop.update(g[1:])
    layers, provenance = [], {}
    members = {g[0]: set(g) for g in groups}
    for k, layer in enumerate(model.layers):
        if k in drop:
            continue
        provenance[len(layers)] = members.get(k, {k})
        layers.append(merged.get(k, layer.copy()))
    return FusedModel(model.with_layers(layers), provenance)


def _mean_layer(model: NetworkModel, group) -> Layer:
    w = np.mean(np.stack([model.layers[k].weight for k in group]), axis=0)
    b = np.mean(np.stack([model.layers[k].bias for k in group]), axis=0)
    return Layer(w, b, model.layers[group[0]].activation)


def fuse_mean(model: NetworkModel, plan: FusionPlan) -> FusedModel:
    """Replace every fused group by the average of its layers.

    The merged layer sits at the group's lowest index; the others are removed.
    """
    groups = components(plan.pairs, len(model))
    for g in groups:
        _check_group(model, g)
    return _rebuild(model, groups, {g[0]: _mean_layer(model, g) for g in groups})


def fuse_freeze(model: NetworkModel, plan: FusionPlan) -> FusedModel:
    """Finalise freeze-fused groups; identical to averaging them."""
    return fuse_mean(model, plan)


def mix_mask(seed: int, layer_index: int, n_rows: int, p: float) -> np.ndarray:
    """Row selection for mixing: True keeps the row of the first layer."""
    return np.array([keyed_uniform(seed, layer_index, r) < p for r in range(n_rows)])


def fuse_mix(model: NetworkModel, plan: FusionPlan) -> FusedModel:
    """Build each fused layer row by row from Bernoulli draws; biases are averaged.

    Groups with more than two members are folded in index order, each partner
    keyed by its own layer index.
    """
    groups = components(plan.pairs, len(model))
    merged = {}
    for g in groups:
        _check_group(model, g)
        w = model.layers[g[0]].weight.copy()
        for k in g[1:]:
            keep = mix_mask(plan.seed, k, w.shape[0], plan.mix_probability)
            w = np.where(keep[:, None], w, model.layers[k].weight)
        b = np.mean(np.stack([model.layers[k].bias for k in g]), axis=0)
        merged[g[0]] = Layer(w, b, model.layers[g[0]].activation)
    return _rebuild(model, groups, merged)


def fuse(model: NetworkModel, plan: FusionPlan) -> FusedModel:
    if plan.strategy == "mix":
        return fuse_mix(model, plan)
    if plan.strategy == "freeze":
        return fuse_freeze(model, plan)
    return fuse_mean(model, plan)


def plan_constraints(plan: FusionPlan, n_layers: int) -> TrainingConstraints:
    """Retraining constraints that precede finalisation of a plan.

    Mean plans tie each group to a shared averaged gradient. Freeze plans keep
    every member fixed except the one farthest from the middle of the network,
    which follows the gamma-weighted combination of its own gradient and the
    frozen members' mean gradient. Mix plans are applied up front and need none.
    """
    groups = components(plan.pairs, n_layers)
    if plan.strategy == "mean":
        return TrainingConstraints(tied_groups=groups)
    if plan.strategy == "mix":
        return TrainingConstraints()
    mid = n_layers / 2.0
    frozen_groups = []
    for g in groups:
        trainable = max(g, key=lambda k: (abs(k - mid), k))
        gammas = [p.gamma for p in plan.pairs
                  if p.i in g and p.gamma is not None]
        gamma = float(np.mean(gammas)) if gammas else 0.5
        frozen_groups.append(FrozenGroup(trainable, [k for k in g if k != trainable], gamma))
    return TrainingConstraints(frozen_groups=frozen_groups)
