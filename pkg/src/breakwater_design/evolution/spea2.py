"""SPEA2 fitness assignment and environmental selection.

Both functions work on an ``(n, 2)`` array of minimized objectives and return
plain arrays, so they apply equally to populations, archives and their union.
"""

from __future__ import annotations

import math

import numpy as np

from ..metrics import dominance_matrix


def _distances(obj: np.ndarray) -> np.ndarray:
    diff = obj[:, None, :] - obj[None, :, :]
    return np.sqrt((diff**2).sum(axis=2))


def strength_raw(objectives) -> tuple[np.ndarray, np.ndarray]:
    """Strength ``S(i)`` (how many ``i`` dominates) and raw fitness ``R(i)``."""
    obj = np.asarray(objectives, dtype=np.float64).reshape(-1, 2)
    dom = dominance_matrix(obj)
    strength = dom.sum(axis=1).astype(np.float64)
    raw = (dom * strength[:, None]).sum(axis=0)
    return strength, raw


def density(objectives) -> np.ndarray:
    """``1 / (sigma_k + 2)`` with ``k = floor(sqrt(n))`` nearest neighbours."""
    obj = np.asarray(objectives, dtype=np.float64).reshape(-1, 2)
    n = len(obj)
    if n <= 1:
        return np.full(n, 0.5)
    d = _distances(obj)
    np.fill_diagonal(d, np.inf)
    k = min(max(int(math.isqrt(n)), 1), n - 1)
    sigma = np.sort(d, axis=1)[:, k - 1]
    return 1.0 / (sigma + 2.0)


def spea2_fitness(objectives) -> np.ndarray:
    """SPEA2 fitness ``R + D`` (lower is better; nondominated points score below 1)."""
    obj = np.asarray(objectives, dtype=np.float64).reshape(-1, 2)
    if len(obj) == 0:
        return np.zeros(0)
    _, raw = strength_raw(obj)
    return raw + density(obj)


def truncate(objectives, size: int) -> np.ndarray:
    """Indices kept after SPEA2 archive truncation down to ``size``.

    Repeatedly drops the point whose sorted distances to the remaining
    points are lexicographically smallest, i.e. the most crowded one.
    """
    obj = np.asarray(objectives, dtype=np.float64).reshape(-1, 2)
    keep = list(range(len(obj)))
    if size >= len(keep):
        return np.array(keep, dtype=int)
    d = _distances(obj)
    np.fill_diagonal(d, np.inf)
    while len(keep) > size:
        sub = np.sort(d[np.ix_(keep, keep)], axis=1)
        # lexsort uses the last key as primary
        worst = np.lexsort(sub.T[::-1])[0]
        del keep[int(worst)]
    return np.array(keep, dtype=int)


def environmental_selection(objectives, fitness, size: int) -> np.ndarray:
    """Indices of the ``size`` survivors.

    Nondominated points (fitness below 1) come first; a surplus is truncated
    by crowding, a shortfall is filled with the best dominated points.
    """
    obj = np.asarray(objectives, dtype=np.float64).reshape(-1, 2)
    fit = np.asarray(fitness, dtype=np.float64)
    n = len(obj)
    if size < 0:
        raise ValueError("selection size must be non-negative")
    if size >= n:
        return np.arange(n)
    front = np.flatnonzero(fit < 1.0)
    if len(front) > size:
        return np.sort(front[truncate(obj[front], size)])
    rest = np.flatnonzero(fit >= 1.0)
    rest = rest[np.argsort(fit[rest], kind="stable")]
    return np.sort(np.concatenate([front, rest[: size - len(front)]]))
