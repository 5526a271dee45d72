"""Baseline compressors: magnitude pruning, k-means weight sharing,
randomised low-rank factorisation and denoising-autoencoder rollout."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import ValidationError
from .fusion import round_half_up
from .net import Dataset, Layer, NetworkModel, forward, loss_and_grad, predict
from .rng import keyed_generator
from .training import sgd_step

# ---------------------------------------------------------------- pruning


@dataclass
class PruneMask:
    masks: list[np.ndarray]  # True = weight survives
    scope: str
    fraction: float

    def sparsity(self) -> float:
        total = sum(m.size for m in self.masks)
        return sum(int(m.size - np.count_nonzero(m)) for m in self.masks) / total

    def as_dict(self) -> dict[int, np.ndarray]:
        return dict(enumerate(self.masks))


def _smallest(values: np.ndarray, count: int) -> np.ndarray:
    keep = np.ones(values.size, dtype=bool)
    if count > 0:
        order = np.argsort(np.abs(values), kind="stable")
        keep[order[:count]] = False
    return keep


def prune(model: NetworkModel, scope: str = "layer", fraction: float = 0.5):
    """Zero the smallest-magnitude weights; biases are never touched.

    ``scope="layer"`` removes ``round(fraction * size)`` weights from every
    layer, ``scope="global"`` ranks all weights of the network together.
    """
    if scope not in ("layer", "global"):
        raise ValidationError(f"unknown pruning scope {scope!r}")
    if not 0.0 <= fraction < 1.0:
        raise ValidationError("pruning fraction must lie in [0, 1)")
    weights = [layer.weight for layer in model.layers]
    if scope == "layer":
        masks = [
            _smallest(w.ravel(), round_half_up(fraction * w.size)).reshape(w.shape)
            for w in weights
        ]
    else:
        flat = np.concatenate([w.ravel() for w in weights])
        keep = _smallest(flat, round_half_up(fraction * flat.size))
        masks, start = [], 0
        for w in weights:
            masks.append(keep[start:start + w.size].reshape(w.shape))
            start += w.size
    out = model.copy()
    for layer, mask in zip(out.layers, masks):
        layer.weight = np.where(mask, layer.weight, 0.0)
    return out, PruneMask(masks, scope, fraction)


# ---------------------------------------------------------------- k-means


@dataclass
class Codebook:
    centroids: list[np.ndarray]
    assignments: list[np.ndarray]  # centroid index per weight, weight-shaped
    objectives: list[list[float]] = field(default_factory=list)  # per layer, per iteration


def _assign(x, centroids):
    # centroids sorted ascending; nearest by midpoint search, lower one on ties
    mids = 0.5 * (centroids[1:] + centroids[:-1])
    return np.searchsorted(mids, x, side="left")


def _kmeanspp(x, k, rng):
    centers = [x[rng.integers(x.size)]]
    d2 = (x - centers[0]) ** 2
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = rng.integers(x.size)
        else:
            idx = rng.choice(x.size, p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, (x - x[idx]) ** 2)
    return np.sort(np.array(centers))


def lloyd_1d(x, k: int, rng: np.random.Generator, max_iters: int = 100):
    """Lloyd iterations on scalar data. Returns (centroids, labels, objectives).

    ``objectives[t]`` is the within-cluster sum of squares after iteration t.
    Clusters that empty out are re-seeded at the point farthest from its
    current centroid.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    k = max(1, min(k, x.size))
    centroids = _kmeanspp(x, k, rng)
    labels = _assign(x, centroids)
    objectives = []
    for _ in range(max_iters):
        sums = np.bincount(labels, weights=x, minlength=k)
        counts = np.bincount(labels, minlength=k)
        new = centroids.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled]
        empty = np.flatnonzero(~filled)
        if empty.size:
            resid = (x - new[labels]) ** 2
            far = np.argsort(-resid, kind="stable")[:empty.size]
            new[empty] = x[far]
        order = np.argsort(new, kind="stable")
        centroids = new[order]
        rank = np.empty(k, dtype=np.int64)
        rank[order] = np.arange(k)
        labels = rank[labels]
        objectives.append(float(np.sum((x - centroids[labels]) ** 2)))
        new_labels = _assign(x, centroids)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return centroids, labels, objectives


def kmeans_quantize(model: NetworkModel, fraction: float = 0.5, seed: int = 0,
                    max_iters: int = 100):
    """Share weights within each layer through a 1-D k-means codebook.

    The number of clusters is ``max(1, round(fraction * width))`` where the
    width is the layer's output dimension.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValidationError("quantization fraction must lie in (0, 1]")
    out = model.copy()
    book = Codebook([], [], [])
    for idx, layer in enumerate(out.layers):
        k = max(1, round_half_up(fraction * layer.shape[1]))
        rng = keyed_generator(seed, idx)
        centroids, labels, objectives = lloyd_1d(layer.weight.ravel(), k, rng, max_iters)
        layer.weight = centroids[labels].reshape(layer.shape)
        book.centroids.append(centroids)
        book.assignments.append(labels.reshape(layer.shape))
        book.objectives.append(objectives)
    return out, book


# ---------------------------------------------------------------- low rank


@dataclass
class LowRankLayer:
    left: np.ndarray
    right: np.ndarray
    rank: int
    error: float
    split: bool = True  # False: kept as one dense layer holding left @ right

    @property
    def shape(self):
        return (self.left.shape[0], self.right.shape[1])


def randomized_svd(a, k: int, oversample: int = 8, seed: int = 0, power_iters: int = 0):
    """Rank-``k`` truncated SVD from a Gaussian sketch of the range of ``a``.

    Sketch columns are drawn so that a larger ``k`` extends the sketch of a
    smaller one under the same seed, which keeps the error non-increasing in
    ``k``.
    """
    a = linalg.as_matrix(a)
    m, n = a.shape
    if k < 1:
        raise ValidationError("rank must be at least 1")
    width = min(k + oversample, min(m, n))
    k = min(k, width)
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((width, n)).T
    q, _ = linalg.qr(a @ omega)
    for _ in range(power_iters):
        q, _ = linalg.qr(a.T @ q)
        q, _ = linalg.qr(a @ q)
    small = q.T @ a
    u_small, s, vt = np.linalg.svd(small, full_matrices=False)
    u = q @ u_small
    return u[:, :k], s[:k], vt[:k]


def low_rank_factor(w, k: int, oversample: int = 8, seed: int = 0,
                    power_iters: int = 0) -> LowRankLayer:
    w = linalg.as_matrix(w)
    u, s, vt = randomized_svd(w, k, oversample, seed, power_iters)
    left = u * s
    err = float(np.linalg.norm(w - left @ vt))
    return LowRankLayer(left, vt, u.shape[1], err)


def truncated_svd_compress(model: NetworkModel, rank_fraction: float = 0.5, seed: int = 0,
                           oversample: int = 8, power_iters: int = 0,
                           data: Dataset | None = None):
    """Replace each layer by two thinner ones, ``x @ L`` then ``(.) @ R + b``.

    Rank is ``max(1, round(rank_fraction * min(rows, cols)))``; layers where
    that rank is not below ``min(rows, cols)`` are left untouched, and layers
    where two factors would hold more numbers than the dense matrix keep a
    single dense layer equal to the rank-k product. With ``data``
    the layers are refitted bottom-to-top against the teacher's
    pre-activations given the student's own (already compressed) inputs, so
    each factorisation absorbs the error cascading from below.
    """
    if not 0.0 < rank_fraction < 1.0:
        raise ValidationError("rank_fraction must lie in (0, 1)")
    teacher_in = student_in = None
    if data is not None:
        teacher_in = student_in = data.inputs
    layers, factors = [], []
    for idx, layer in enumerate(model.layers):
        rows, cols = layer.shape
        k = max(1, round_half_up(rank_fraction * min(rows, cols)))
        target_w = layer.weight
        if data is not None:
            target = teacher_in @ layer.weight
            target_w = np.linalg.lstsq(student_in, target, rcond=None)[0]
        if k >= min(rows, cols):
            new = [Layer(target_w.copy(), layer.bias.copy(), layer.activation)]
            factors.append(None)
        else:
            key = seed * 1_000_003 + idx
            if data is None:
                lr_layer = low_rank_factor(target_w, k, oversample, key, power_iters)
            else:
                fitted = student_in @ target_w
                _, _, vt = randomized_svd(fitted, k, oversample, key, power_iters)
                left = target_w @ vt.T
                err = float(np.linalg.norm(target - student_in @ left @ vt))
                lr_layer = LowRankLayer(left, vt, vt.shape[0], err)
            if k * (rows + cols) >= rows * cols:
                lr_layer.split = False
                new = [Layer(lr_layer.left @ lr_layer.right, layer.bias.copy(), layer.activation)]
            else:
                new = [
                    Layer(lr_layer.left, np.zeros(lr_layer.rank), "identity"),
                    Layer(lr_layer.right, layer.bias.copy(), layer.activation),
                ]
            factors.append(lr_layer)
        layers.extend(new)
        if data is not None:
            teacher_in = _apply(layer, teacher_in)
            for piece in new:
                student_in = _apply(piece, student_in)
    return model.with_layers(layers), factors


def _apply(layer: Layer, z):
    out, _ = forward(NetworkModel([layer], "mse"), z)
    return out


# ---------------------------------------------------------------- DAE rollout


@dataclass
class DAEResult:
    encoder: Layer
    decoder: Layer
    mse: float


def train_dae(z, hidden: int, epochs: int = 200, noise_std: float = 0.1, seed: int = 0,
              lr: float = 0.05, batch_size: int | None = None) -> DAEResult:
    """One-hidden-layer ReLU denoising autoencoder fitted by SGD on MSE.

    Fresh Gaussian input noise is drawn every epoch; the returned ``mse`` is
    the clean-input reconstruction error after training.
    """
    z = linalg.as_matrix(z)
    n, d = z.shape
    if hidden < 1:
        raise ValidationError("autoencoder hidden width must be at least 1")
    rng = np.random.default_rng(seed)
    enc = Layer(rng.normal(0.0, 1.0 / np.sqrt(d), (d, hidden)), np.full(hidden, 0.1), "relu")
    dec = Layer(rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, d)), z.mean(axis=0), "identity")
    ae = NetworkModel([enc, dec], "mse")
    for _ in range(epochs):
        order = rng.permutation(n) if batch_size else np.arange(n)
        step = batch_size or n
        for s in range(0, n, step):
            idx = order[s:s + step]
            noisy = z[idx] + noise_std * rng.standard_normal((idx.size, d))
            _, grads = loss_and_grad(ae, noisy, z[idx])
            ae = sgd_step(ae, grads, lr, clip_norm=5.0)
    mse = float(np.mean((predict(ae, z) - z) ** 2))
    return DAEResult(ae.layers[0], ae.layers[1], mse)


@dataclass
class RolloutReport:
    reconstruction_mse: list[float]
    output_mse: float


def dae_rollout(model: NetworkModel, data: Dataset, hidden_fraction: float = 0.5,
                epochs: int = 200, noise_std: float = 0.1, seed: int = 0, lr: float = 0.05,
                batch_size: int | None = None):
    """Student rollout: compress each layer's input through a trained DAE.

    Layers are handled first to last. Layer ``l`` is replaced by the encoder
    (ReLU, reduced width) followed by the decoder merged into the original
    weights, and the next layer's autoencoder is trained on activations of
    the partially replaced student, so reconstruction errors cascade.
    """
    if len(data) == 0:
        raise ValidationError("dataset is empty")
    if not 0.0 < hidden_fraction < 1.0:
        raise ValidationError("hidden_fraction must lie in (0, 1)")
    student: list[Layer] = []
    z = data.inputs
    errors = []
    for idx, layer in enumerate(model.layers):
        hidden = round_half_up(hidden_fraction * layer.shape[0])
        if hidden < 1:
            raise ValidationError(f"layer {idx} would get a hidden width of 0")
        res = train_dae(z, hidden, epochs, noise_std, seed * 1_000_003 + idx, lr, batch_size)
        errors.append(res.mse)
        merged = Layer(res.decoder.weight @ layer.weight,
                       res.decoder.bias @ layer.weight + layer.bias, layer.activation)
        student.extend([res.encoder.copy(), merged])
        z = _apply(merged, _apply(res.encoder, z))
    student_model = model.with_layers(student)
    drift = float(np.mean((predict(student_model, data.inputs) - predict(model, data.inputs)) ** 2))
    return student_model, RolloutReport(errors, drift)
