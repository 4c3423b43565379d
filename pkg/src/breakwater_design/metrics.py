"""Pareto utilities and experiment metrics for two minimized objectives."""

from __future__ import annotations

from typing import Sequence

import numpy as np

QUANTILES = (0.25, 0.5, 0.75)


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected (n, 2) objective points, got shape {arr.shape}")
    return arr


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """``a`` is no worse than ``b`` everywhere and strictly better somewhere."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return bool(np.all(a <= b) and np.any(a < b))


def dominance_matrix(points) -> np.ndarray:
    """``M[i, j]`` is true when point ``i`` dominates point ``j``."""
    p = _as_points(points)
    le = (p[:, None, :] <= p[None, :, :]).all(axis=2)
    lt = (p[:, None, :] < p[None, :, :]).any(axis=2)
    return le & lt


def nondominated_mask(points) -> np.ndarray:
    p = _as_points(points)
    if len(p) == 0:
        return np.zeros(0, dtype=bool)
    return ~dominance_matrix(p).any(axis=0)


def nondominated(points) -> np.ndarray:
    p = _as_points(points)
    return p[nondominated_mask(p)]


def hypervolume(points, reference: Sequence[float]) -> float:
    """Exact 2-D hypervolume dominated by ``points`` and bounded by ``reference``.

    Points not strictly better than the reference in both objectives add
    nothing and are dropped.
    """
    p = _as_points(points)
    ref = np.asarray(reference, dtype=np.float64)
    p = p[(p[:, 0] < ref[0]) & (p[:, 1] < ref[1])]
    if len(p) == 0:
        return 0.0
    p = p[np.lexsort((p[:, 1], p[:, 0]))]
    area = 0.0
    best_y = ref[1]
    for x, y in p:
        if y < best_y:
            area += (ref[0] - x) * (best_y - y)
            best_y = y
    return float(area)


def hypervolume_mc(points, reference: Sequence[float], n_samples: int = 1_000_000, seed: int = 0) -> float:
    """Monte-Carlo hypervolume estimate over the box spanned by the ideal point."""
    p = _as_points(points)
    ref = np.asarray(reference, dtype=np.float64)
    p = p[(p[:, 0] < ref[0]) & (p[:, 1] < ref[1])]
    if len(p) == 0:
        return 0.0
    lo = p.min(axis=0)
    rng = np.random.default_rng(seed)
    box = np.prod(ref - lo)
    hits = 0
    chunk = 100_000
    for start in range(0, n_samples, chunk):
        m = min(chunk, n_samples - start)
        s = lo + rng.random((m, 2)) * (ref - lo)
        covered = np.zeros(m, dtype=bool)
        for x, y in p:
            covered |= (s[:, 0] >= x) & (s[:, 1] >= y)
        hits += int(covered.sum())
    return float(box * hits / n_samples)


def reference_point(point_sets: Sequence, margin: float = 1.05) -> np.ndarray:
    """Componentwise maximum over all points, scaled by ``margin``."""
    stacked = [_as_points(p) for p in point_sets]
    stacked = [p for p in stacked if len(p)]
    if not stacked:
        raise ValueError("no points to derive a reference point from")
    return np.vstack(stacked).max(axis=0) * margin


def _nearest(a: np.ndarray, b: np.ndarray, primary: int) -> np.ndarray:
    """Index of the point of ``b`` nearest to each point of ``a`` in one objective.

    Ties are broken by distance in the other objective, then by index.
    """
    d1 = np.abs(a[:, primary][:, None] - b[:, primary][None, :])
    d2 = np.abs(a[:, 1 - primary][:, None] - b[:, 1 - primary][None, :])
    out = np.empty(len(a), dtype=int)
    for i in range(len(a)):
        out[i] = np.lexsort((np.arange(len(b)), d2[i], d1[i]))[0]
    return out


def efficiency(archive_pred, archive_baseline) -> dict[str, float]:
    """Relative cost and wave-height change against a baseline archive.

    Each predicted point is paired with the baseline point nearest in the
    other objective: cost is compared at matched wave height and wave height
    at matched cost. Results are mean percentage changes.
    """
    a = _as_points(archive_pred)
    b = _as_points(archive_baseline)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("efficiency needs two non-empty archives")
    by_wh = _nearest(a, b, primary=1)
    by_cost = _nearest(a, b, primary=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        cost_ratio = np.where(b[by_wh, 0] > 0, a[:, 0] / b[by_wh, 0], 1.0)
        wh_ratio = np.where(b[by_cost, 1] > 0, a[:, 1] / b[by_cost, 1], 1.0)
    return {
        "cost_pct": float(np.mean(cost_ratio - 1.0) * 100.0),
        "wh_pct": float(np.mean(wh_ratio - 1.0) * 100.0),
    }


def step_values(evals: Sequence[float], values: Sequence[float], grid: np.ndarray) -> np.ndarray:
    """Value of a step function (last observation carried forward) on ``grid``.

    Grid points before the first observation get NaN.
    """
    evals = np.asarray(evals, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    idx = np.searchsorted(evals, grid, side="right") - 1
    out = np.full(len(grid), np.nan)
    ok = idx >= 0
    out[ok] = values[idx[ok]]
    return out


def quantile_trace(
    traces: Sequence[tuple[Sequence[float], Sequence[float]]],
    qs: Sequence[float] = QUANTILES,
    grid: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-rank quantiles of hypervolume aligned on real-evaluation count.

    ``traces`` holds ``(real_evals, hv)`` pairs. Returns the grid and a
    ``(len(qs), len(grid))`` array; grid points where some run has not
    started yet use only the runs that have.
    """
    if not traces:
        raise ValueError("quantile_trace needs at least one trace")
    if grid is None:
        grid = np.unique(np.concatenate([np.asarray(e, dtype=np.float64) for e, _ in traces]))
    grid = np.asarray(grid, dtype=np.float64)
    table = np.vstack([step_values(e, v, grid) for e, v in traces])
    out = np.full((len(qs), len(grid)), np.nan)
    for j in range(len(grid)):
        col = table[:, j]
        col = col[~np.isnan(col)]
        if len(col):
            out[:, j] = np.quantile(col, qs, method="inverted_cdf")
    return grid, out
