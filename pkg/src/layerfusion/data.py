"""Small synthetic classification tasks and CSV loading."""
from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .net import Dataset

KINDS = ("blobs", "rings")
BLOB_RADIUS = 2.0


def blob_centers(classes: int) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(classes) / classes
    return BLOB_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def synth_dataset(kind: str = "blobs", n_per_class: int = 50, classes: int = 4,
                  noise: float = 0.1, seed: int = 0) -> Dataset:
    """Two-dimensional toy data with one-hot targets.

    ``blobs`` places isotropic Gaussian clusters (std ``noise``) at evenly
    spaced points on a circle of radius 2. ``rings`` draws concentric annuli
    of radius 1, 2, ... with radial noise ``noise``.
    """
    if classes < 2:
        raise ValidationError("need at least two classes")
    if kind not in KINDS:
        raise ValidationError(f"unknown dataset kind {kind!r}")
    if n_per_class < 1 or noise < 0:
        raise ValidationError("n_per_class must be positive and noise non-negative")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(classes), n_per_class)
    if kind == "blobs":
        x = blob_centers(classes)[labels] + noise * rng.standard_normal((labels.size, 2))
    else:
        theta = rng.uniform(0.0, 2.0 * np.pi, labels.size)
        radius = labels + 1.0 + noise * rng.standard_normal(labels.size)
        x = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    return Dataset(x, np.eye(classes)[labels], labels)


def load_csv_dataset(path) -> Dataset:
    """CSV with feature columns followed by an integer ``label`` column."""
    raw = np.genfromtxt(path, delimiter=",", names=True)
    names = raw.dtype.names
    if not names or "label" not in names:
        raise ValidationError("CSV dataset needs a 'label' column")
    features = [n for n in names if n != "label"]
    x = np.stack([np.atleast_1d(raw[n]) for n in features], axis=1).astype(np.float64)
    labels = np.atleast_1d(raw["label"]).astype(np.int64)
    if np.any(labels < 0):
        raise ValidationError("labels must be non-negative integers")
    classes = int(labels.max()) + 1
    return Dataset(x, np.eye(classes)[labels], labels)
