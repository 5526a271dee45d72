import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import sqrtm
from scipy.stats import ortho_group

from layerfusion import metrics as M
from layerfusion.errors import AlignmentRequiredError, NothingToRankError, SizeLimitError
from layerfusion.linalg import covariance

from conftest import make_model


def spd(rng, d, lo=0.5, hi=4.0):
    q = ortho_group.rvs(d, random_state=rng) if d > 1 else np.ones((1, 1))
    return q @ np.diag(rng.uniform(lo, hi, d)) @ q.T


def test_euclidean_examples():
    assert M.euclidean_distance([1, 2, 3], [1, 2, 5]) == 2.0
    assert M.euclidean_distance([1, 2], [1, 2]) == 0.0
    with pytest.raises(AlignmentRequiredError):
        M.euclidean_distance([1, 2], [1, 2, 3])


def test_cos_cov_examples(rng):
    s = spd(rng, 3)
    assert M.cos_cov(s, s) == pytest.approx(1.0)
    assert M.cos_cov(np.diag([1.0, 2.0]), np.diag([2.0, 1.0])) == pytest.approx(0.8)
    assert M.cos_cov(np.eye(3), 5 * np.eye(3)) == pytest.approx(1.0)


def test_kl_examples(rng):
    s = spd(rng, 4)
    assert M.kl_cov(s, s) == pytest.approx(0.0, abs=1e-12)
    assert M.kl_cov([[2.0]], [[1.0]]) == pytest.approx(0.5 * (1 - math.log(2)), rel=1e-12)
    assert M.skl_cov([[1.0]], [[2.0]]) == pytest.approx(0.125, rel=1e-12)


def test_kl_matches_gaussian_formula(rng):
    a, b = spd(rng, 5), spd(rng, 5)
    expect = 0.5 * (np.trace(np.linalg.solve(b, a)) - 5
                    + np.linalg.slogdet(b)[1] - np.linalg.slogdet(a)[1])
    assert M.kl_cov(a, b) == pytest.approx(expect, rel=1e-10)


def test_bures_examples(rng):
    s = spd(rng, 3)
    assert M.bures_ws2(s, s) == pytest.approx(0.0, abs=1e-7)
    assert M.bures_ws2([[1.0]], [[4.0]]) == pytest.approx(1.0)
    assert M.bures_ws2([[1.0]], [[1.0]], [0.0], [3.0]) == pytest.approx(3.0)


def test_bures_against_scipy_sqrtm(rng):
    a, b = spd(rng, 6), spd(rng, 6)
    ra = np.real(sqrtm(a))
    cross = np.real(sqrtm(ra @ b @ ra))
    expect = math.sqrt(np.trace(a + b - 2 * cross))
    assert M.bures_ws2(a, b) == pytest.approx(expect, rel=1e-9)
    assert M.bures_ws2_trace_form(a, b) == pytest.approx(expect, rel=1e-9)


def test_bures_singular_covariance_is_fine(rng):
    w = rng.normal(size=(3, 8))  # rank-2 covariance
    s = covariance(w)
    assert M.bures_ws2(s, s) == pytest.approx(0.0, abs=1e-7)


def test_exact_ws_examples(rng):
    w = rng.normal(size=(4, 5))
    assert M.exact_ws(w, w) == pytest.approx(0.0, abs=1e-15)
    assert M.wasserstein_empirical([0.1, 0.9], [0.9, 0.1]) == 0.0
    assert M.wasserstein_empirical([0.2, 0.8], [0.5, 0.5]) == pytest.approx(0.6)


def test_exact_ws_sorted_matching_for_convex_cost(rng):
    x, y = rng.uniform(size=40), rng.uniform(size=40)
    for p in (1.0, 2.0, 3.0):
        expect = np.sum(np.abs(np.sort(x) - np.sort(y)) ** p) ** (1 / p)
        assert M.wasserstein_empirical(x, y, p) == pytest.approx(expect, rel=1e-12)


def test_exact_ws_size_limit():
    with pytest.raises(SizeLimitError):
        M.exact_ws(np.zeros((32, 32)), np.zeros((32, 32)))


def test_riemannian_examples(rng):
    s = spd(rng, 4)
    for f in (M.airm, M.lerm, M.jbld):
        assert f(s, s) == pytest.approx(0.0, abs=1e-12)
    assert M.airm([[1.0]], [[math.e ** 2]]) == pytest.approx(2.0)
    assert M.lerm([[1.0]], [[math.e ** 2]]) == pytest.approx(2.0)
    assert M.jbld([[1.0]], [[3.0]]) == pytest.approx(math.log(2) - 0.5 * math.log(3))


def test_airm_against_generalised_eigenvalues(rng):
    a, b = spd(rng, 5), spd(rng, 5)
    lam = np.linalg.eigvals(np.linalg.solve(a, b)).real
    assert M.airm(a, b) == pytest.approx(np.sqrt(np.sum(np.log(lam) ** 2)), rel=1e-10)


def test_jbld_congruence_and_inversion_invariance(rng):
    a, b = spd(rng, 4), spd(rng, 4)
    g = rng.normal(size=(4, 4)) + 3 * np.eye(4)
    d = M.jbld(a, b)
    assert M.jbld(g @ a @ g.T, g @ b @ g.T) == pytest.approx(d, rel=1e-8)
    assert M.jbld(np.linalg.inv(a), np.linalg.inv(b)) == pytest.approx(d, rel=1e-8)


def test_cca_examples(rng):
    a = rng.normal(size=(256, 8))
    assert M.cca_rho(a, a, ridge=1e-6).rho > 0.99
    u = ortho_group.rvs(8, random_state=rng)
    assert M.cca_rho(a, a @ u, ridge=1e-6).rho == pytest.approx(M.cca_rho(a, a, ridge=1e-6).rho,
                                                                abs=1e-6)
    assert M.cca_rho(a, rng.normal(size=(256, 8))).rho < 0.5


def test_cca_detects_shared_direction(rng):
    z = rng.normal(size=(300, 1))
    a = np.hstack([z, rng.normal(size=(300, 3))])
    b = np.hstack([rng.normal(size=(300, 2)), -2 * z + 0.01 * rng.normal(size=(300, 1))])
    assert M.cca_rho(a, b).rho > 0.99


def test_layer_distance_handles_unequal_shapes(rng):
    a = M.summarize(rng.normal(size=(6, 6)))
    b = M.summarize(rng.normal(size=(6, 8)))
    for metric in M.METRICS:
        assert np.isfinite(M.layer_distance(a, b, metric))


def test_kl_directed_and_symmetrised(rng):
    a, b = M.summarize(rng.normal(size=(20, 3))), M.summarize(rng.normal(size=(20, 3)))
    d_ab = M.layer_distance(a, b, "kl_cov", directed=True)
    d_ba = M.layer_distance(b, a, "kl_cov", directed=True)
    assert d_ab != pytest.approx(d_ba)
    assert M.layer_distance(a, b, "kl_cov") == pytest.approx(0.5 * (d_ab + d_ba))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(M.METRICS))
def test_metric_is_nonnegative_and_symmetric(seed, metric):
    r = np.random.default_rng(seed)
    shape = (int(r.integers(2, 12)), int(r.integers(1, 8)))
    a, b = M.summarize(r.normal(size=shape)), M.summarize(r.normal(size=shape))
    d_ab = M.layer_distance(a, b, metric)
    assert d_ab >= -1e-12
    assert d_ab == pytest.approx(M.layer_distance(b, a, metric), abs=1e-10)


def three_layer_model(rng, duplicate=False):
    w0, w1 = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    return make_model([w0, w1, w0 if duplicate else rng.normal(size=(4, 4))])


def test_pairwise_counts(rng):
    model = three_layer_model(rng)
    adj = M.pairwise_distances(model, "euclidean", "adjacent")
    assert len(adj.pairs()) == 2
    assert np.isnan(adj.distances[0, 2])
    assert len(M.pairwise_distances(model, "euclidean", "global").pairs()) == 3


def test_duplicate_layers_have_zero_distance(rng):
    model = three_layer_model(rng, duplicate=True)
    for metric in M.METRICS:
        rep = M.pairwise_distances(model, metric)
        bound = 0.01 if metric == "cca" else 1e-9  # the CCA ridge keeps rho below 1
        assert abs(rep.distances[0, 2]) < bound, metric


def test_fusable_rules():
    model = make_model([np.ones((2, 3)), np.ones((3, 3)), np.ones((3, 3)), np.ones((3, 3)),
                        np.ones((3, 1))])
    assert M.fusable(model, 1, 2)
    assert not M.fusable(model, 0, 1)
    assert not M.fusable(model, 3, 4)  # last layer excluded and activation differs
    assert M.fusable(model, 2, 3)
    assert M.fusable(model, 1, 3)


def test_single_layer_has_nothing_to_rank():
    with pytest.raises(NothingToRankError):
        M.pairwise_distances(make_model([np.ones((2, 2))]), "euclidean")


def test_csv_round_trip(rng):
    rep = M.pairwise_distances(three_layer_model(rng), "bures_ws2")
    back = M.SimilarityReport.from_csv(rep.to_csv())
    np.testing.assert_array_equal(back.distances, rep.distances)
    assert back.metric == "bures_ws2" and back.mode == "global"
