import json

import numpy as np

from layerfusion.metrics import SimilarityReport, pairwise_distances
from layerfusion.net import init_model
from layerfusion.report import emit_heatmap, heatmap_json, plot_heatmap, plot_training
from layerfusion.retrain import compress_retrain, make_schedule


def test_two_layer_heatmap():
    model = init_model([3, 3, 2], seed=0)
    doc = emit_heatmap(pairwise_distances(model, "euclidean"))
    assert doc["n_layers"] == 2
    assert doc["distances"][0][0] == doc["distances"][1][1] == 0.0
    assert doc["distances"][0][1] == doc["distances"][1][0] > 0


def test_duplicate_layers_give_zero_entry():
    model = init_model([4, 4, 4, 4, 2], seed=1)
    model.layers[2] = model.layers[1].copy()
    doc = emit_heatmap(pairwise_distances(model, "bures_ws2"))
    assert abs(doc["distances"][1][2]) < 1e-7


def test_adjacent_mode_nulls():
    model = init_model([4, 4, 4, 4, 2], seed=2)
    doc = json.loads(heatmap_json(pairwise_distances(model, "euclidean", "adjacent")))
    flat = [v for row in doc["distances"] for v in row]
    assert flat.count(None) == 6
    d = np.array([[np.nan if v is None else v for v in row] for row in doc["distances"]])
    np.testing.assert_array_equal(np.isnan(d), np.isnan(d.T))


def test_figures_are_written_and_deterministic(tmp_path, blobs):
    rep = SimilarityReport("euclidean", "global", np.array([[0.0, 1.0], [1.0, 0.0]]))
    plot_heatmap(rep, tmp_path / "a.png")
    plot_heatmap(rep, tmp_path / "b.png")
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    assert (tmp_path / "a.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    _, train = compress_retrain(init_model([2, 6, 6, 6, 4], seed=0), blobs, "prune-layer",
                                make_schedule(0.5, 2, "uniform", 4))
    plot_training(train, tmp_path / "t.png")
    assert (tmp_path / "t.png").stat().st_size > 0
