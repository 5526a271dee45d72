"""Layer similarity and distance measures used to rank fusion candidates."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import linalg
from .align import align_unequal
from .errors import (
    AlignmentRequiredError,
    DegenerateInputError,
    NothingToRankError,
    ValidationError,
)
from .hungarian import MAX_ASSIGNMENT_DIM, Assignment, hungarian
from .net import NetworkModel
from .rng import splitmix64_array

METRICS = (
    "euclidean",
    "cos_cov",
    "kl_cov",
    "skl_cov",
    "bures_ws2",
    "exact_ws",
    "airm",
    "lerm",
    "jbld",
    "cca",
)
MODES = ("global", "adjacent")
DEFAULT_CCA_RIDGE = 1e-4


@dataclass
class LayerSummary:
    layer_index: int
    weights: np.ndarray
    flat_weights: np.ndarray
    mean: np.ndarray  # column means, same dimension as the covariance
    covariance: np.ndarray
    softmax_rows: np.ndarray

    @property
    def shape(self):
        return self.weights.shape


def summarize(weights, layer_index: int = 0, block_cap: int = linalg.DEFAULT_BLOCK_CAP):
    w = linalg.as_matrix(weights)
    return LayerSummary(
        layer_index=layer_index,
        weights=w,
        flat_weights=w.ravel(),
        mean=w.mean(axis=0),
        covariance=linalg.covariance(w, block_cap),
        softmax_rows=linalg.row_softmax(w),
    )


def _same_dim(sa, sb):
    sa = linalg.as_matrix(sa)
    sb = linalg.as_matrix(sb)
    if sa.shape != sb.shape:
        raise AlignmentRequiredError(
            f"covariance dimensions differ: {sa.shape} vs {sb.shape}"
        )
    return sa, sb


def euclidean_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise AlignmentRequiredError(f"flat lengths differ: {a.size} vs {b.size}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def cos_cov(sa, sb) -> float:
    """Cosine similarity of two covariance matrices under the trace inner product."""
    sa, sb = _same_dim(sa, sb)
    na = np.linalg.norm(sa)
    nb = np.linalg.norm(sb)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("covariance with zero Frobenius norm")
    return float(np.sum(sa * sb) / (na * nb))


def kl_cov(sa, sb) -> float:
    """KL divergence between zero-mean Gaussians N(0, sa) and N(0, sb).

    Evaluated as ``sum(mu - 1 - log mu) / 2`` over the eigenvalues ``mu`` of
    ``sb^-1 sa``, which stays accurate for the ill-conditioned covariances of
    rank-deficient layers.
    """
    sa, sb = _same_dim(sa, sb)
    log_mu = 2.0 * np.log(_whitened_singular_values(sb, sa))
    return max(float(0.5 * np.sum(np.expm1(log_mu) - log_mu)), 0.0)


def skl_cov(sa, sb) -> float:
    return 0.5 * (kl_cov(sa, sb) + kl_cov(sb, sa))


def bures_ws2(sa, sb, mean_a=0.0, mean_b=0.0) -> float:
    """2-Wasserstein distance between N(mean_a, sa) and N(mean_b, sb).

    The Bures term is evaluated as ``||sqrt(A) - sqrt(B) U||_F^2`` with ``U``
    the orthogonal polar factor aligning the two square roots, which equals
    ``tr A + tr B - 2 tr (sqrt(A) B sqrt(A))^(1/2)`` but does not lose half
    the significant digits to cancellation when ``A`` is close to ``B``.
    """
    sa, sb = _same_dim(sa, sb)
    mean_a = np.broadcast_to(np.asarray(mean_a, dtype=np.float64), (sa.shape[0],))
    mean_b = np.broadcast_to(np.asarray(mean_b, dtype=np.float64), (sa.shape[0],))
    ra = linalg.matrix_sqrt(sa)
    rb = linalg.matrix_sqrt(sb)
    p, _, qt = np.linalg.svd(ra @ rb)
    u = qt.T @ p.T
    bures_sq = float(np.sum((ra - rb @ u) ** 2))
    mean_sq = float(np.sum((mean_a - mean_b) ** 2))
    return math.sqrt(mean_sq + bures_sq)


def bures_ws2_trace_form(sa, sb, mean_a=0.0, mean_b=0.0) -> float:
    """Same quantity via the textbook trace expression (kept as a cross-check)."""
    sa, sb = _same_dim(sa, sb)
    ra = linalg.matrix_sqrt(sa)
    inner = linalg.matrix_sqrt(0.5 * (ra @ sb @ ra + (ra @ sb @ ra).T))
    value = np.trace(sa) + np.trace(sb) - 2.0 * np.trace(inner)
    dm = np.asarray(mean_a, dtype=np.float64) - np.asarray(mean_b, dtype=np.float64)
    value += float(np.sum(np.broadcast_to(dm, (sa.shape[0],)) ** 2))
    return math.sqrt(max(float(value), 0.0))


def _canonical_order(x):
    """An ordering of ``x`` that depends only on its multiset of values.

    Keys are hashes of the bit patterns; plain sorting would also be
    canonical but hands the solver long chains of near-tied augmenting paths.
    """
    x = x + 0.0  # fold -0.0 into +0.0
    return np.lexsort((x, splitmix64_array(x.view(np.uint64))))


def wasserstein_assignment(x, y, p: float = 1.0) -> Assignment:
    """Optimal matching of two equal-size 1-D multisets under ``|x - y|^p``.

    The problem is solved in a canonical element order and the permutation
    mapped back to the caller's indices, so the result does not depend on
    element order even when several matchings tie.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise AlignmentRequiredError(f"multiset sizes differ: {x.size} vs {y.size}")
    if p < 1:
        raise ValidationError("Wasserstein order must be >= 1")
    ox, oy = _canonical_order(x), _canonical_order(y)
    xs, ys = x[ox], y[oy]
    solved = hungarian(np.abs(xs[:, None] - ys[None, :]) ** p, MAX_ASSIGNMENT_DIM)
    perm = np.empty(x.size, dtype=np.int64)
    perm[ox] = oy[solved.permutation]
    return Assignment(perm, solved.total_cost)


def wasserstein_empirical(x, y, p: float = 1.0) -> float:
    """p-Wasserstein distance between two equal-size 1-D multisets."""
    total = wasserstein_assignment(x, y, p).total_cost
    return float(max(total, 0.0) ** (1.0 / p))


def exact_ws(wa, wb, p: float = 1.0) -> float:
    """Exact Wasserstein distance between row-softmaxed, flattened weights."""
    pa = linalg.row_softmax(wa).ravel()
    pb = linalg.row_softmax(wb).ravel()
    return wasserstein_empirical(pa, pb, p)


def _whitened_singular_values(sa, sb):
    """Singular values of ``La^-1/2 Va^T Vb Lb^1/2`` for ridge-floored inputs.

    Their squares are the eigenvalues of ``sa^-1 sb``. Working from the two
    eigendecompositions keeps identical inputs at exactly unit values.
    """
    ea = linalg.sym_eig(linalg.check_symmetric(sa))
    eb = linalg.sym_eig(linalg.check_symmetric(sb))
    la = linalg.floored_eigenvalues(ea.eigenvalues)
    lb = linalg.floored_eigenvalues(eb.eigenvalues)
    g = (ea.eigenvectors.T @ eb.eigenvectors) * np.sqrt(lb)[None, :] / np.sqrt(la)[:, None]
    return np.linalg.svd(g, compute_uv=False)


def airm(sa, sb) -> float:
    """Affine-invariant Riemannian distance ``||log(A^-1/2 B A^-1/2)||_F``.

    Inputs with a condition number near the 1e-10 ridge floor only carry
    about six significant digits, so the pair is evaluated in a fixed
    argument order to keep the result exactly symmetric.
    """
    sa, sb = _same_dim(sa, sb)
    if sa.tobytes() > sb.tobytes():
        sa, sb = sb, sa
    sigma = _whitened_singular_values(sa, sb)
    return float(np.sqrt(np.sum((2.0 * np.log(sigma)) ** 2)))


def lerm(sa, sb) -> float:
    sa, sb = _same_dim(sa, sb)
    diff = linalg.matrix_log(linalg.regularize(sa)) - linalg.matrix_log(linalg.regularize(sb))
    return float(np.linalg.norm(diff))


def jbld(sa, sb) -> float:
    """Jensen-Bregman LogDet divergence."""
    sa, sb = _same_dim(sa, sb)
    ra = linalg.regularize(sa)
    rb = linalg.regularize(sb)
    value = linalg.logdet(0.5 * (ra + rb)) - 0.5 * (linalg.logdet(ra) + linalg.logdet(rb))
    return max(float(value), 0.0)


@dataclass
class CCAResult:
    rho: float
    projection_a: np.ndarray
    projection_b: np.ndarray
    ridge: float


def _column_blocks(d, cap):
    return [slice(s, min(s + cap, d)) for s in range(0, d, cap)]


def _cca_single(a, b, ridge):
    saa = linalg.covariance(a, a.shape[1]) + ridge * np.eye(a.shape[1])
    sbb = linalg.covariance(b, b.shape[1]) + ridge * np.eye(b.shape[1])
    sab = linalg.cross_covariance(a, b)
    wa = linalg.matrix_inv_sqrt(saa)
    wb = linalg.matrix_inv_sqrt(sbb)
    u, s, vt = np.linalg.svd(wa @ sab @ wb)
    pa = wa @ u[:, 0]
    pb = wb @ vt[0]
    return float(s[0]), pa / np.linalg.norm(pa), pb / np.linalg.norm(pb)


def cca_rho(wa, wb, ridge: float = DEFAULT_CCA_RIDGE,
            block_cap: int = linalg.DEFAULT_BLOCK_CAP) -> CCAResult:
    """Leading regularised canonical correlation between the columns of two matrices.

    Wide matrices are split into column blocks of at most ``block_cap`` and
    the coefficient is averaged over every pair of blocks.
    """
    a = linalg.as_matrix(wa)
    b = linalg.as_matrix(wb)
    if a.shape[0] != b.shape[0]:
        raise ValidationError(f"row counts differ: {a.shape[0]} vs {b.shape[0]}")
    if ridge <= 0:
        raise ValidationError("ridge must be positive")
    if a.shape[0] < 2:
        raise DegenerateInputError("CCA needs at least 2 rows")
    blocks_a = _column_blocks(a.shape[1], block_cap)
    blocks_b = _column_blocks(b.shape[1], block_cap)
    rhos = []
    best = None
    for ba in blocks_a:
        for bb in blocks_b:
            rho, pa, pb = _cca_single(a[:, ba], b[:, bb], ridge)
            rhos.append(rho)
            if best is None or rho > best[0]:
                best = (rho, ba, pa, bb, pb)
    proj_a = np.zeros(a.shape[1])
    proj_b = np.zeros(b.shape[1])
    proj_a[best[1]] = best[2]
    proj_b[best[3]] = best[4]
    return CCAResult(float(np.mean(rhos)), proj_a, proj_b, ridge)


def aligned_summaries(a: LayerSummary, b: LayerSummary, block_cap=linalg.DEFAULT_BLOCK_CAP):
    """Bring two layers to a common shape (that of the smaller one)."""
    if a.shape == b.shape:
        return a, b
    fa, fb = align_unequal(a.flat_weights, b.flat_weights)
    shape = (a if a.weights.size <= b.weights.size else b).shape
    return (
        summarize(fa.reshape(shape), a.layer_index, block_cap),
        summarize(fb.reshape(shape), b.layer_index, block_cap),
    )


def layer_distance(a: LayerSummary, b: LayerSummary, metric: str, *, p: float = 1.0,
                   ridge: float = DEFAULT_CCA_RIDGE, directed: bool = False,
                   block_cap: int = linalg.DEFAULT_BLOCK_CAP) -> float:
    """Distance used for ranking; similarities are turned into ``1 - value``.

    ``kl_cov`` is symmetrised unless ``directed`` is set.
    """
    if metric not in METRICS:
        raise ValidationError(f"unknown metric {metric!r}")
    a, b = aligned_summaries(a, b, block_cap)
    if metric == "euclidean":
        return euclidean_distance(a.flat_weights, b.flat_weights)
    if metric == "cos_cov":
        return 1.0 - cos_cov(a.covariance, b.covariance)
    if metric == "kl_cov":
        if directed:
            return kl_cov(a.covariance, b.covariance)
        return skl_cov(a.covariance, b.covariance)
    if metric == "skl_cov":
        return skl_cov(a.covariance, b.covariance)
    if metric == "bures_ws2":
        return bures_ws2(a.covariance, b.covariance, a.mean, b.mean)
    if metric == "exact_ws":
        return exact_ws(a.weights, b.weights, p)
    if metric == "airm":
        return airm(a.covariance, b.covariance)
    if metric == "lerm":
        return lerm(a.covariance, b.covariance)
    if metric == "jbld":
        return jbld(a.covariance, b.covariance)
    return 1.0 - cca_rho(a.weights, b.weights, ridge, block_cap).rho


@dataclass
class SimilarityReport:
    metric: str
    mode: str
    distances: np.ndarray  # NaN where a pair was not evaluated

    @property
    def n_layers(self) -> int:
        return self.distances.shape[0]

    def pairs(self):
        """Evaluated pairs ``(i, j, distance)`` with ``i < j``, row-major order."""
        out = []
        n = self.n_layers
        for i in range(n):
            for j in range(i + 1, n):
                d = self.distances[i, j]
                if np.isfinite(d):
                    out.append((i, j, float(d)))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["layer_i", "layer_j", "metric", "distance"])
        for i, j, d in self.pairs():
            writer.writerow([i, j, self.metric, format(d, ".17g")])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, n_layers: int | None = None, mode: str | None = None):
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise NothingToRankError("similarity CSV has no rows")
        metrics = {r["metric"] for r in rows}
        if len(metrics) != 1:
            raise ValidationError("similarity CSV mixes metrics")
        entries = [(int(r["layer_i"]), int(r["layer_j"]), float(r["distance"])) for r in rows]
        n = max(max(i, j) for i, j, _ in entries) + 1
        if n_layers is not None:
            if n_layers < n:
                raise ValidationError("n_layers smaller than the largest layer index")
            n = n_layers
        if mode is None:
            adjacent = all(abs(i - j) == 1 for i, j, _ in entries)
            mode = "adjacent" if adjacent and n > 2 else "global"
        dist = np.full((n, n), np.nan)
        np.fill_diagonal(dist, 0.0)
        for i, j, d in entries:
            dist[i, j] = dist[j, i] = d
        return cls(metrics.pop(), mode, dist)


def fusable(model: NetworkModel, i: int, j: int, include_io: bool = False) -> bool:
    """Whether layers ``i`` and ``j`` can be merged into one layer.

    Both must share an activation and be square of the same size, so the
    network still composes once one of them is removed.
    """
    last = len(model) - 1
    if not include_io and ({i, j} & {0, last}):
        return False
    a, b = model.layers[i], model.layers[j]
    return (
        a.activation == b.activation
        and a.shape == b.shape
        and a.shape[0] == a.shape[1]
    )


def pairwise_distances(model: NetworkModel, metric: str, mode: str = "global", *,
                       fusable_only: bool = False, include_io: bool = False,
                       p: float = 1.0, ridge: float = DEFAULT_CCA_RIDGE,
                       block_cap: int = linalg.DEFAULT_BLOCK_CAP) -> SimilarityReport:
    """Distance matrix between the layers of ``model``.

    ``global`` evaluates every pair, ``adjacent`` only neighbours. With
    ``fusable_only`` pairs that cannot be merged are left unevaluated.
    """
    if metric not in METRICS:
        raise ValidationError(f"unknown metric {metric!r}")
    if mode not in MODES:
        raise ValidationError(f"unknown ranking mode {mode!r}")
    n = len(model)
    if n < 2:
        raise NothingToRankError("need at least two layers to rank")
    if mode == "global":
        candidates = list(combinations(range(n), 2))
    else:
        candidates = [(i, i + 1) for i in range(n - 1)]
    if fusable_only:
        candidates = [(i, j) for i, j in candidates if fusable(model, i, j, include_io)]
    summaries = {}
    dist = np.full((n, n), np.nan)
    np.fill_diagonal(dist, 0.0)
    for i, j in candidates:
        for k in (i, j):
            if k not in summaries:
                summaries[k] = summarize(model.layers[k].weight, k, block_cap)
        d = layer_distance(summaries[i], summaries[j], metric, p=p, ridge=ridge,
                           block_cap=block_cap)
        dist[i, j] = dist[j, i] = d
    return SimilarityReport(metric, mode, dist)
