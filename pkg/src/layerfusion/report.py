"""Report emission: heatmap JSON for similarity reports and the figures
rendered next to delimited outputs."""
from __future__ import annotations

import io
import json
import math

import numpy as np

from .container import atomic_write
from .metrics import SimilarityReport

FIGURE_RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "svg.hashsalt": "layerfusion",
}


def emit_heatmap(report: SimilarityReport) -> dict:
    """Heatmap record with ``None`` for pairs that were not evaluated."""
    n = report.n_layers
    rows = []
    for i in range(n):
        row = []
        for j in range(n):
            d = report.distances[i, j]
            row.append(None if not math.isfinite(d) else float(d))
        rows.append(row)
    return {"metric": report.metric, "mode": report.mode, "n_layers": n, "distances": rows}


def heatmap_json(report: SimilarityReport) -> str:
    return json.dumps(emit_heatmap(report), indent=2) + "\n"


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    buf = io.BytesIO()
    fmt = str(path).rsplit(".", 1)[-1].lower()
    # drop the creation date etc. so repeated runs give identical bytes
    metadata = {"Software": None} if fmt == "png" else {"Date": None, "Creator": None}
    fig.savefig(buf, format=fmt, metadata=metadata, bbox_inches="tight")
    atomic_write(path, buf.getvalue())


def plot_heatmap(report: SimilarityReport, path):
    plt = _pyplot()
    with plt.rc_context(FIGURE_RC):
        n = report.n_layers
        data = np.ma.masked_invalid(report.distances)
        fig, ax = plt.subplots(figsize=(1.2 + 0.45 * n, 0.9 + 0.45 * n))
        im = ax.imshow(data, cmap="viridis_r", interpolation="nearest")
        ax.set_xticks(range(n))
        ax.set_yticks(range(n))
        ax.set_xlabel("layer")
        ax.set_ylabel("layer")
        ax.set_title(f"{report.metric} ({report.mode})")
        fig.colorbar(im, ax=ax, label="distance")
        _save(fig, path)
        plt.close(fig)


def plot_training(report, path):
    """Loss, accuracy and parameter count over retraining epochs."""
    plt = _pyplot()
    rows = report.rows
    epochs = [r["epoch"] for r in rows]
    with plt.rc_context(FIGURE_RC):
        fig, axes = plt.subplots(1, 3, figsize=(9.0, 2.8))
        axes[0].plot(epochs, [r["loss"] for r in rows], marker=".")
        axes[0].set_ylabel("loss")
        axes[1].plot(epochs, [r["accuracy"] for r in rows], marker=".")
        axes[1].set_ylabel("accuracy")
        axes[1].set_ylim(-0.02, 1.02)
        axes[2].step(epochs, [r["params"] for r in rows], where="post")
        axes[2].set_ylabel("parameters")
        for ax in axes:
            ax.set_xlabel("epoch")
        fig.suptitle(report.compressor)
        fig.tight_layout()
        _save(fig, path)
        plt.close(fig)
