"""Acceptance suite. Each test prints one PASS/FAIL line, repeated in the
pytest terminal summary."""
import json
import math
import time
from itertools import permutations

import numpy as np
from scipy.stats import ortho_group

from layerfusion import container
from layerfusion.baselines import kmeans_quantize, lloyd_1d, low_rank_factor
from layerfusion.cli import run_cli
from layerfusion.fusion import FusionPair, FusionPlan, fuse, fuse_mean, plan_constraints, select_top_k
from layerfusion.linalg import row_softmax, sym_eig
from layerfusion.metrics import (METRICS, airm, bures_ws2, cca_rho, cos_cov, exact_ws, jbld,
                                 layer_distance, pairwise_distances, summarize,
                                 wasserstein_assignment, wasserstein_empirical)
from layerfusion.net import Layer, NetworkModel, accuracy, init_model, loss_and_grad
from layerfusion.retrain import compress_retrain, make_schedule
from layerfusion.training import fit

from conftest import record
from gradcheck import flat_analytic, numeric_gradients, relative_error


def random_shape(r, max_width=32, max_size=512):
    """Layer shape with both widths <= max_width and at most max_size weights."""
    rows = int(r.integers(2, max_width + 1))
    cols = int(r.integers(1, min(max_width, max_size // rows) + 1))
    return rows, cols


def test_metric_axioms():
    start = time.perf_counter()
    worst_self, worst_sym, min_rho = 0.0, 0.0, 1.0
    for seed in range(100):
        r = np.random.default_rng(seed)
        shape = random_shape(r)
        wa, wb = r.normal(size=shape), r.normal(size=shape)
        a, a2, b = summarize(wa), summarize(wa.copy()), summarize(wb)
        for metric in METRICS:
            d_self = layer_distance(a, a2, metric)
            if metric == "cca":
                min_rho = min(min_rho, 1.0 - d_self)
            else:
                worst_self = max(worst_self, abs(d_self))
            worst_sym = max(worst_sym, abs(layer_distance(a, b, metric)
                                           - layer_distance(b, a, metric)))
    elapsed = time.perf_counter() - start
    ok = worst_self < 1e-9 and min_rho > 0.99 and worst_sym <= 1e-10 and elapsed < 10
    detail = (f"metric axioms: max self-distance {worst_self:.2e}, min self rho {min_rho:.6f}, "
              f"max asymmetry {worst_sym:.2e}, {elapsed:.2f}s")
    assert record(1, ok, detail), detail


def test_hungarian_matches_exhaustive_search():
    start = time.perf_counter()
    mismatches = 0
    for seed in range(50):
        r = np.random.default_rng(seed)
        d = int(r.integers(1, 7))
        rows = int(r.choice([k for k in (1, 2, 3) if d % k == 0]))
        p = float(r.choice([1.0, 2.0, 3.0]))
        x = row_softmax(r.normal(size=(rows, d // rows))).ravel()
        y = row_softmax(r.normal(size=(rows, d // rows))).ravel()
        cost = np.abs(x[:, None] - y[None, :]) ** p
        got = wasserstein_assignment(x, y, p)
        totals = {perm: math.fsum(cost[i, perm[i]] for i in range(d))
                  for perm in permutations(range(d))}
        best_cost = min(totals.values())
        # p = 1 on a line often has several optimal matchings; any of them counts
        optimal = {perm for perm, total in totals.items() if total == best_cost}
        if got.total_cost != best_cost or tuple(got.permutation.tolist()) not in optimal:
            mismatches += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 5
    detail = f"hungarian optimality: {mismatches}/50 mismatches, {elapsed:.2f}s"
    assert record(2, ok, detail), detail


def test_bures_closed_form_on_diagonals():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        r = np.random.default_rng(seed)
        d = int(r.integers(1, 17))
        la, lb = r.uniform(0.01, 5.0, d), r.uniform(0.01, 5.0, d)
        ma, mb = r.normal(size=d), r.normal(size=d)
        expect = math.sqrt(np.sum((ma - mb) ** 2) + np.sum((np.sqrt(la) - np.sqrt(lb)) ** 2))
        worst = max(worst, abs(bures_ws2(np.diag(la), np.diag(lb), ma, mb) - expect))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 5
    detail = f"bures closed form: max error {worst:.2e}, {elapsed:.2f}s"
    assert record(3, ok, detail), detail


def test_jbld_airm_bounds():
    start = time.perf_counter()
    violations = 0
    for seed in range(200):
        r = np.random.default_rng(seed)
        d = int(r.integers(1, 17))
        mats = []
        for _ in range(2):
            q = ortho_group.rvs(d, random_state=r) if d > 1 else np.ones((1, 1))
            mats.append(q @ np.diag(r.uniform(0.5, 4.0, d)) @ q.T)
        x, y = (0.5 * (m + m.T) for m in mats)
        eigs = np.concatenate([np.linalg.eigvalsh(x), np.linalg.eigvalsh(y)])
        big, small = eigs.max(), eigs.min()
        j, a2 = jbld(x, y), airm(x, y) ** 2
        if not j <= a2 + 1e-6:
            violations += 1
        if not a2 <= 2 * math.log(big / small) * (j + d * math.log(2)) + 1e-6:
            violations += 1
    elapsed = time.perf_counter() - start
    ok = violations == 0 and elapsed < 30
    detail = f"jbld/airm bounds: {violations} violations over 200 pairs, {elapsed:.2f}s"
    assert record(4, ok, detail), detail


def test_gradients_match_finite_differences():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        r = np.random.default_rng(seed)
        depth = int(r.integers(1, 4))
        sizes = [int(s) for s in r.integers(1, 6, size=depth + 1)]
        activation = ["tanh", "relu", "identity"][seed % 3]
        loss = "mse" if seed % 2 else "cross_entropy_softmax"
        model = init_model(sizes, activation, loss, seed=seed)
        for layer in model.layers:
            layer.bias = r.normal(0.0, 0.5, layer.bias.shape)
        x = r.normal(size=(6, sizes[0]))
        if loss == "mse":
            y = r.normal(size=(6, sizes[-1]))
        else:
            y = np.eye(sizes[-1])[r.integers(0, sizes[-1], 6)]
        _, grads = loss_and_grad(model, x, y)
        worst = max(worst, relative_error(flat_analytic(grads),
                                          numeric_gradients(model, x, y, step=1e-5)))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 30
    detail = f"gradient oracle: max relative error {worst:.2e} over 20 nets, {elapsed:.2f}s"
    assert record(5, ok, detail), detail


def test_lloyd_monotone_and_cluster_count():
    start = time.perf_counter()
    increases, runs = 0, 0
    for seed in range(50):
        r = np.random.default_rng(seed)
        model = init_model([int(r.integers(2, 12)), int(r.integers(4, 40)),
                            int(r.integers(2, 10))], seed=seed)
        _, book = kmeans_quantize(model, float(r.uniform(0.1, 1.0)), seed=seed)
        for obj in book.objectives:
            runs += 1
            increases += sum(b > a for a, b in zip(obj, obj[1:]))
    wide = NetworkModel([Layer(np.random.default_rng(0).normal(size=(4, 1024)), np.zeros(1024),
                               "identity")], "mse")
    _, book = kmeans_quantize(wide, 0.5, seed=0)
    clusters = np.unique(book.centroids[0]).size
    elapsed = time.perf_counter() - start
    ok = increases == 0 and clusters == 512 and elapsed < 30
    detail = (f"lloyd monotonicity: {increases} increases in {runs} layer runs; width-1024 "
              f"layer at 0.5 -> {clusters} clusters, {elapsed:.2f}s")
    assert record(6, ok, detail), detail


def test_randomized_svd_quality():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        a = np.random.default_rng(seed).normal(size=(64, 64))
        lam = np.clip(sym_eig(a.T @ a).eigenvalues, 0.0, None)
        exact = math.sqrt(lam[16:].sum())
        worst = max(worst, low_rank_factor(a, 16, seed=seed).error / exact)
    elapsed = time.perf_counter() - start
    ok = worst <= 1.5 and elapsed < 30
    detail = f"randomized svd: worst error ratio {worst:.4f} vs exact, {elapsed:.2f}s"
    assert record(7, ok, detail), detail


def test_fusion_accounting(blobs):
    checks = []
    for seed, (pairs, width) in enumerate([([(1, 2)], 6), ([(1, 2), (3, 5)], 5),
                                           ([(1, 4), (2, 3), (5, 6)], 7)]):
        model = init_model([3] + [width] * 7 + [2], seed=seed)
        plan = FusionPlan([FusionPair(i, j, 0.0) for i, j in pairs])
        removed = model.n_params - fuse_mean(model, plan).model.n_params
        checks.append(removed == len(pairs) * (width * width + width))

    model = init_model([2, 8, 8, 8, 8, 4], seed=1)
    rep = pairwise_distances(model, "bures_ws2", fusable_only=True)
    same = fuse(model, select_top_k(rep, 0.0, model=model)).model
    checks.append(len(same) == len(model) and all(
        a.weight.tobytes() == b.weight.tobytes() and a.bias.tobytes() == b.bias.tobytes()
        for a, b in zip(model.layers, same.layers)))

    plan = select_top_k(rep, 0.4, model=model, strategy="freeze")
    held = fit(model, blobs, 0, constraints=plan_constraints(plan, len(model)))
    frozen = fuse(held, plan).model
    mean = fuse_mean(model, FusionPlan(plan.pairs, "mean")).model
    checks.append(all(a.weight.tobytes() == b.weight.tobytes()
                      and a.bias.tobytes() == b.bias.tobytes()
                      for a, b in zip(frozen.layers, mean.layers)))
    via_loop, _ = compress_retrain(model, blobs, "fuse-freeze", make_schedule(0.4, 1, "uniform", 0))
    checks.append(all(a.weight.tobytes() == b.weight.tobytes()
                      for a, b in zip(via_loop.layers, mean.layers)))
    ok = all(checks)
    detail = ("fusion accounting: parameter removal, fraction-0 identity and freeze "
              f"finalisation checks {sum(checks)}/{len(checks)}")
    assert record(8, ok, detail), detail


def test_compress_retrain_trend(blobs):
    start = time.perf_counter()
    base = fit(init_model([2, 32, 32, 32, 32, 4], "tanh", seed=0), blobs, 200, lr=0.05, seed=0)
    base_acc = accuracy(base, blobs)

    def run(fraction, epochs):
        out, _ = compress_retrain(base, blobs, "fuse-mean",
                                  make_schedule(fraction, 1, "uniform", epochs), seed=0)
        return accuracy(out, blobs)

    retrained_25 = run(0.25, 5)
    frozen_25, frozen_75 = run(0.25, 0), run(0.75, 0)
    frozen_50, retrained_50 = run(0.5, 0), run(0.5, 5)
    elapsed = time.perf_counter() - start
    ok = (base_acc > 0.95 and retrained_25 >= base_acc - 0.05
          and frozen_75 <= frozen_25 - 0.10 and retrained_50 > frozen_50 and elapsed < 180)
    detail = (f"compress-retrain trend: baseline {base_acc:.3f}; 25% retrained {retrained_25:.3f}; "
              f"no retraining 25%/50%/75% {frozen_25:.3f}/{frozen_50:.3f}/{frozen_75:.3f}; "
              f"50% retrained {retrained_50:.3f}, {elapsed:.2f}s")
    assert record(9, ok, detail), detail


def test_invariances():
    perm_failures, worst_cos, worst_cca = 0, 0.0, 0.0
    r = np.random.default_rng(0)
    wa, wb = r.normal(size=(8, 6)), r.normal(size=(8, 6))
    base = exact_ws(wa, wb)
    for _ in range(20):
        rows = r.permutation(8)
        cols = np.stack([r.permutation(6) for _ in range(8)])
        shuffled = np.take_along_axis(wa[rows], cols, axis=1)
        if exact_ws(shuffled, wb) != base or exact_ws(wb, shuffled) != exact_ws(wb, wa):
            perm_failures += 1
        x, y = r.uniform(size=30), r.uniform(size=30)
        if wasserstein_empirical(r.permutation(x), y) != wasserstein_empirical(x, y):
            perm_failures += 1
    for seed in range(20):
        g = np.random.default_rng(seed)
        a, b = g.normal(size=(64, 10)), g.normal(size=(64, 10))
        b[:, 0] += a[:, 0]
        u = ortho_group.rvs(10, random_state=g)
        v = ortho_group.rvs(10, random_state=g)
        sa, sb = np.cov(a, rowvar=False), np.cov(b, rowvar=False)
        worst_cos = max(worst_cos, abs(cos_cov(u.T @ sa @ u, u.T @ sb @ u) - cos_cov(sa, sb)))
        worst_cos = max(worst_cos, abs(
            layer_distance(summarize(a @ u), summarize(b @ u), "cos_cov")
            - layer_distance(summarize(a), summarize(b), "cos_cov")))
        worst_cca = max(worst_cca, abs(cca_rho(a @ u, b @ v).rho - cca_rho(a, b).rho))
    ok = perm_failures == 0 and worst_cos <= 1e-8 and worst_cca <= 1e-8
    detail = (f"invariances: {perm_failures} exact_ws permutation mismatches; cos_cov drift "
              f"{worst_cos:.2e}; cca drift {worst_cca:.2e}")
    assert record(10, ok, detail), detail


def test_container_and_cli_round_trips(tmp_path):
    model = init_model([2, 8, 8, 8, 4], seed=4)
    for layer in model.layers:
        layer.bias = np.random.default_rng(1).normal(size=layer.bias.shape)
    path = tmp_path / "m.lftc"
    container.save_model(model, path)
    back = container.load_model(path)
    bitwise = all(a.weight.tobytes() == b.weight.tobytes() and a.bias.tobytes() == b.bias.tobytes()
                  for a, b in zip(model.layers, back.layers))

    out = tmp_path / "fused.lftc"
    code = run_cli(["fuse", "--model", str(path), "--fraction", "0", "--out", str(out)])
    identical = code == 0 and out.read_bytes() == path.read_bytes()

    report = tmp_path / "r.csv"
    code = run_cli(["compress-retrain", "--model", str(path), "--compressor", "fuse-mean",
                    "--schedule", "exponential", "--total-fraction", "0.5", "--steps", "4",
                    "--epochs", "4", "--data", "blobs", "--out", str(tmp_path / "c.lftc"),
                    "--report", str(report)])
    got = np.array(json.loads(report.with_suffix(".json").read_text())["step_fractions"])
    ratio, steps, total = 2.0, 4, 0.5
    closed = total * ratio ** -np.arange(steps) * (1 - 1 / ratio) / (1 - ratio ** -steps)
    fractions_ok = code == 0 and np.max(np.abs(got - closed)) <= 1e-4 and np.allclose(
        got, [0.2667, 0.1333, 0.0667, 0.0333], atol=1e-4)
    ok = bitwise and identical and fractions_ok
    detail = (f"container/cli round trips: bitwise load {bitwise}, fuse --fraction 0 "
              f"byte-identical {identical}, exponential fractions {np.round(got, 4).tolist()}")
    assert record(11, ok, detail), detail
