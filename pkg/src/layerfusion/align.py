from __future__ import annotations

import numpy as np


def align_unequal(a, b):
    """Trim the longer of two flat weight vectors to the shorter's length.

    The ``len(long) - len(short)`` smallest-magnitude entries of the longer
    vector are dropped (earliest index first among equal magnitudes); the
    survivors keep their original order.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == b.size:
        return a, b
    swap = a.size > b.size
    short, long_ = (b, a) if swap else (a, b)
    drop = long_.size - short.size
    # stable sort on |x| puts the earliest index first among ties
    order = np.argsort(np.abs(long_), kind="stable")
    keep = np.ones(long_.size, dtype=bool)
    keep[order[:drop]] = False
    trimmed = long_[keep]
    return (trimmed, short) if swap else (short, trimmed)
