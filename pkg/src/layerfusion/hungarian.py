"""Minimum-cost perfect matching on a square cost matrix.

Shortest augmenting path form of the Hungarian method: one Dijkstra search
per row over reduced costs, with row/column potentials kept feasible after
each augmentation. O(d^3) overall; the inner scan is vectorised over columns.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SizeLimitError, ValidationError
from .linalg import as_matrix

MAX_ASSIGNMENT_DIM = 512


@dataclass(frozen=True)
class Assignment:
    permutation: np.ndarray  # permutation[i] = column matched to row i
    total_cost: float


def _warm_start(c):
    """Feasible potentials with a partial matching on tight edges.

    Column reduction sets ``v_j = min_i c_ij`` and gives each column its
    cheapest row while that row is free; every row then gets
    ``u_i = min_j c_ij - v_j`` and takes that column if it is still free.
    """
    n = c.shape[0]
    col4row = np.full(n, -1, dtype=np.int64)
    row4col = np.full(n, -1, dtype=np.int64)
    v = c.min(axis=0)
    for j, i in enumerate(c.argmin(axis=0)):
        if col4row[i] < 0:
            col4row[i], row4col[j] = j, i
    u = np.zeros(n)
    for i in np.flatnonzero(col4row < 0):
        reduced = c[i] - v
        u[i] = reduced.min()
        free = np.flatnonzero((reduced == u[i]) & (row4col < 0))
        if free.size:
            col4row[i], row4col[free[0]] = free[0], i
    return u, v, col4row, row4col


def hungarian(cost, max_dim: int = MAX_ASSIGNMENT_DIM) -> Assignment:
    c = as_matrix(cost)
    n, m = c.shape
    if n != m:
        raise ValidationError(f"cost matrix must be square, got {c.shape}")
    if n > max_dim:
        raise SizeLimitError(
            f"assignment of dimension {n} exceeds the limit of {max_dim}; "
            "use the Gaussian (Bures) approximation instead"
        )
    if n == 0:
        return Assignment(np.zeros(0, dtype=np.int64), 0.0)

    u, v, col4row, row4col = _warm_start(c)

    for cur_row in np.flatnonzero(col4row < 0):
        shortest = np.full(n, np.inf)
        path = np.zeros(n, dtype=np.int64)
        reached = np.zeros(n)  # +inf once a column has been scanned
        seen_rows = [cur_row]
        min_val = 0.0
        i = cur_row
        while True:
            cand = c[i] - v
            cand += (min_val - u[i])
            cand += reached
            better = cand < shortest
            np.copyto(path, i, where=better)
            np.minimum(shortest, cand, out=shortest)

            pick = shortest + reached
            j = int(pick.argmin())
            min_val = float(pick[j])
            reached[j] = np.inf
            if row4col[j] < 0:
                sink = j
                break
            i = int(row4col[j])
            seen_rows.append(i)

        seen_cols = np.isinf(reached)
        u[cur_row] += min_val
        rows = np.array(seen_rows[1:], dtype=np.int64)
        u[rows] += min_val - shortest[col4row[rows]]
        v[seen_cols] -= min_val - shortest[seen_cols]

        j = sink
        while True:
            i = int(path[j])
            row4col[j] = i
            col4row[i], j = j, int(col4row[i])
            if i == cur_row:
                break

    # exactly rounded, so the total does not depend on row order
    total = math.fsum(c[np.arange(n), col4row].tolist())
    return Assignment(col4row, total)
