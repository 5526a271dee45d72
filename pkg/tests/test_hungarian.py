from itertools import permutations

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from layerfusion.errors import SizeLimitError, ValidationError
from layerfusion.hungarian import hungarian


def brute_force(cost):
    n = cost.shape[0]
    return min(sum(cost[i, p[i]] for i in range(n)) for p in permutations(range(n)))


def test_two_by_two():
    a = hungarian([[1, 2], [2, 1]])
    assert list(a.permutation) == [0, 1]
    assert a.total_cost == 2.0


def test_diagonal_favourable_gives_identity(rng):
    cost = rng.uniform(5, 10, size=(6, 6))
    np.fill_diagonal(cost, 0.0)
    assert list(hungarian(cost).permutation) == list(range(6))


def test_random_five_by_five_matches_exhaustive(rng):
    cost = rng.normal(size=(5, 5))
    assert hungarian(cost).total_cost == pytest.approx(brute_force(cost), abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_matches_scipy(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(1, 80))
    cost = r.integers(0, 5, size=(n, n)).astype(float)  # many ties
    rows, cols = linear_sum_assignment(cost)
    a = hungarian(cost)
    assert a.total_cost == cost[rows, cols].sum()
    assert sorted(a.permutation) == list(range(n))


def test_result_is_a_permutation(rng):
    a = hungarian(rng.normal(size=(30, 30)))
    assert sorted(a.permutation.tolist()) == list(range(30))


def test_empty_and_one():
    assert hungarian(np.zeros((0, 0))).total_cost == 0.0
    assert hungarian([[3.5]]).total_cost == 3.5


def test_rejects_rectangular_and_large():
    with pytest.raises(ValidationError):
        hungarian(np.zeros((2, 3)))
    with pytest.raises(SizeLimitError):
        hungarian(np.zeros((513, 513)))
