"""Compression schedules and the iterative compress/retrain loop."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .baselines import kmeans_quantize, prune, truncated_svd_compress
from .errors import NothingToRankError, ValidationError
from .fusion import fuse, plan_constraints, round_half_up, select_top_k
from .metrics import pairwise_distances
from .net import Dataset, Layer, NetworkModel, accuracy, effective_params, forward, loss_value
from .training import TrainingConstraints, apply_constraints, fit

COMPRESSORS = (
    "fuse-mean",
    "fuse-freeze",
    "fuse-mix",
    "prune-layer",
    "prune-global",
    "quantize",
    "svd",
)
SCHEDULE_MODES = ("uniform", "exponential")


@dataclass
class CompressionSchedule:
    total_fraction: float
    steps: int
    mode: str
    fractions: list[float]
    epochs_per_step: list[int]

    @property
    def cumulative(self) -> list[float]:
        return list(np.cumsum(self.fractions)) if self.fractions else []


def make_schedule(total_fraction: float, steps: int, mode: str = "uniform",
                  total_epochs: int = 0, ratio: float = 2.0) -> CompressionSchedule:
    """Split a compression budget and an epoch budget over ``steps`` steps.

    ``uniform`` gives every step the same share. ``exponential`` gives step
    ``t`` a compression share proportional to ``ratio**-t`` and an epoch
    share proportional to ``ratio**t``: heavy compression early, long
    retraining late. Epoch counts are rounded with the remainder going to
    the last step.
    """
    if steps < 1:
        raise ValidationError("schedule needs at least one step")
    if not 0.0 <= total_fraction < 1.0:
        raise ValidationError("total_fraction must lie in [0, 1)")
    if mode not in SCHEDULE_MODES:
        raise ValidationError(f"unknown schedule mode {mode!r}")
    if total_epochs < 0:
        raise ValidationError("total_epochs must be non-negative")
    if ratio <= 0:
        raise ValidationError("ratio must be positive")
    t = np.arange(steps, dtype=np.float64)
    if mode == "uniform" or steps == 1:
        frac_w = np.ones(steps)
        epoch_w = np.ones(steps)
    else:
        frac_w = ratio ** -t
        epoch_w = ratio ** t
    fractions = [float(x) for x in total_fraction * frac_w / frac_w.sum()]
    raw = total_epochs * epoch_w / epoch_w.sum()
    if mode == "uniform":
        head = [int(math.floor(x)) for x in raw[:-1]]
    else:
        head = [round_half_up(x) for x in raw[:-1]]
    epochs = head + [total_epochs - sum(head)]
    return CompressionSchedule(total_fraction, steps, mode, fractions, epochs)


@dataclass
class TrainReport:
    compressor: str
    rows: list[dict] = field(default_factory=list)
    step_fractions: list[float] = field(default_factory=list)
    stopped_early: bool = False
    note: str = ""

    CSV_FIELDS = ("epoch", "step", "fraction_cum", "params", "loss", "accuracy")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.CSV_FIELDS)
        for row in self.rows:
            writer.writerow([
                row["epoch"], row["step"], format(row["fraction_cum"], ".17g"), row["params"],
                format(row["loss"], ".17g"), format(row["accuracy"], ".17g"),
            ])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = asdict(self)
        return json.dumps(doc, indent=2, allow_nan=True) + "\n"

    @property
    def final_accuracy(self) -> float:
        return self.rows[-1]["accuracy"] if self.rows else float("nan")


def _evaluate(model: NetworkModel, data: Dataset):
    out, _ = forward(model, data.inputs)
    loss = loss_value(model, out, data.targets)
    acc = accuracy(model, data) if data.labels is not None else float("nan")
    return loss, acc


def _merge_factors(model: NetworkModel, factors) -> NetworkModel:
    """Undo a low-rank split, multiplying factor pairs back into dense layers."""
    layers, k = [], 0
    for lr in factors:
        if lr is None or not lr.split:
            layers.append(model.layers[k].copy())
            k += 1
        else:
            left, right = model.layers[k], model.layers[k + 1]
            layers.append(Layer(left.weight @ right.weight,
                                left.bias @ right.weight + right.bias, right.activation))
            k += 2
    return model.with_layers(layers)


def compress_retrain(model: NetworkModel, data: Dataset, compressor: str,
                     schedule: CompressionSchedule, seed: int = 0, *, lr: float = 0.05,
                     metric: str = "bures_ws2", mode: str = "global",
                     include_io: bool = False, mix_probability: float = 0.5,
                     batch_size: int | None = None, clip_norm: float | None = 5.0,
                     mean_mode: str = "merge"):
    """Alternate compression and retraining following ``schedule``.

    Zeroing/decomposing compressors (pruning, quantization, SVD) compress to
    the cumulative fraction and then retrain; pruning masks stay active
    through retraining. Fusion removes ``round(L * cumulative)`` layers in
    total, where ``L`` is the starting depth. ``fuse-mean`` and ``fuse-mix``
    merge the selected layers and retrain the merged network
    (``mean_mode="tied"`` instead retrains with tied gradients and averages
    afterwards); ``fuse-freeze`` retrains with the frozen/gamma constraints
    and averages at the end of each step.
    """
    if compressor not in COMPRESSORS:
        raise ValidationError(f"unknown compressor {compressor!r}")
    if mean_mode not in ("merge", "tied"):
        raise ValidationError(f"unknown mean_mode {mean_mode!r}")
    report = TrainReport(compressor, step_fractions=list(schedule.fractions))
    current = model.copy()
    depth0 = len(model)
    removed = 0
    cum = 0.0
    masks: dict[int, np.ndarray] = {}
    factors = None
    epoch = 0

    def log(step, constraints=None):
        loss, acc = _evaluate(current, data)
        tied = constraints.tied_groups if constraints else ()
        params = effective_params(current, masks or None, tied)
        report.rows.append({"epoch": epoch, "step": step, "fraction_cum": cum,
                            "params": params, "loss": loss, "accuracy": acc})

    for step, (frac, n_epochs) in enumerate(zip(schedule.fractions, schedule.epochs_per_step)):
        cum += frac
        constraints = TrainingConstraints()
        finalize = None
        if cum > 0.0:
            if compressor.startswith("fuse-"):
                strategy = compressor.split("-", 1)[1]
                need = round_half_up(depth0 * cum) - removed
                if need > 0:
                    try:
                        sim = pairwise_distances(current, metric, mode, fusable_only=True,
                                                 include_io=include_io)
                        plan = select_top_k(sim, cum, k=need, model=current, strategy=strategy,
                                            seed=seed + step, mix_probability=mix_probability)
                    except NothingToRankError:
                        plan = None
                    if plan is None or not plan.pairs:
                        report.stopped_early = True
                        report.note = f"no fusable layer pairs left at step {step}"
                        break
                    if strategy == "freeze" or (strategy == "mean" and mean_mode == "tied"):
                        constraints = plan_constraints(plan, len(current))
                        if strategy == "mean":
                            current = apply_constraints(current, constraints)
                        finalize = plan
                    else:
                        before = len(current)
                        current = fuse(current, plan).model
                        removed += before - len(current)
            elif compressor.startswith("prune-"):
                current, pm = prune(current, compressor.split("-", 1)[1], cum)
                for k, m in enumerate(pm.masks):
                    masks[k] = m & masks[k] if k in masks else m
                constraints = TrainingConstraints(masks=dict(masks))
            elif compressor == "quantize":
                current, _ = kmeans_quantize(current, 1.0 - cum, seed + step)
            else:
                base = current if factors is None else _merge_factors(current, factors)
                current, factors = truncated_svd_compress(base, 1.0 - cum, seed + step)

        def on_epoch(_, m, __):
            nonlocal current, epoch
            current = m
            epoch += 1
            log(step, constraints)

        if n_epochs > 0:
            current = fit(current, data, n_epochs, lr, constraints, batch_size,
                          seed=seed * 7919 + step, clip_norm=clip_norm, on_epoch=on_epoch)
        if finalize is not None:
            before = len(current)
            current = fuse(current, finalize).model
            removed += before - len(current)
        if n_epochs == 0 or finalize is not None:
            log(step)

    if compressor == "quantize" and cum > 0.0 and not report.stopped_early:
        current, _ = kmeans_quantize(current, 1.0 - cum, seed + len(schedule.fractions))
        log(len(schedule.fractions) - 1)
        report.note = "final row re-quantized after retraining"
    return current, report
