"""Counter-based randomness: the same key always yields the same draw."""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def splitmix64_array(x: np.ndarray) -> np.ndarray:
    """Element-wise ``splitmix64`` on a uint64 array (arithmetic wraps)."""
    x = np.asarray(x, dtype=np.uint64) + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def keyed_uniform(seed: int, *keys: int) -> float:
    """Uniform draw in [0, 1) determined only by ``seed`` and ``keys``."""
    h = splitmix64(seed & _MASK)
    for k in keys:
        h = splitmix64(h ^ (k & _MASK))
    return (h >> 11) * 2.0**-53


def keyed_generator(seed: int, *keys: int) -> np.random.Generator:
    """numpy Generator seeded from a (seed, keys...) tuple."""
    return np.random.default_rng([seed & _MASK, *[k & _MASK for k in keys]])
