"""Layer fusion and weight-similarity tools for small dense networks."""
from .baselines import dae_rollout, kmeans_quantize, prune, randomized_svd, truncated_svd_compress
from .container import load_model, save_model
from .errors import FormatError, LayerFusionError, ValidationError
from .fusion import FusionPlan, fuse, js_gamma, select_top_k
from .hungarian import hungarian
from .metrics import METRICS, SimilarityReport, layer_distance, pairwise_distances
from .net import Dataset, Layer, NetworkModel, init_model
from .retrain import compress_retrain, make_schedule
from .training import fit

__version__ = "0.1.0"

__all__ = [
    "METRICS", "Dataset", "FormatError", "FusionPlan", "Layer", "LayerFusionError",
    "NetworkModel", "SimilarityReport", "ValidationError", "compress_retrain", "dae_rollout",
    "fit", "fuse", "hungarian", "init_model", "js_gamma", "kmeans_quantize", "layer_distance",
    "load_model", "make_schedule", "pairwise_distances", "prune", "randomized_svd",
    "save_model", "select_top_k", "truncated_svd_compress",
]
