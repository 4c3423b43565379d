"""Breakwater genotypes: polylines, construction cost, constraints, rasterization.

Coordinates are continuous grid units with ``y`` pointing up. Cell ``(x, y)``
covers the closed square ``[x, x+1] x [y, y+1]`` and is stored at array index
``[y, x]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:
    from .environment import DomainConfig

Point = tuple[float, float]
Polyline = tuple[Point, ...]

VIOLATION_KINDS = (
    "in_prohibited",
    "in_protection",
    "out_of_bounds",
    "too_close_target",
    "too_close_structure",
    "self_proximity",
)

_SNAP = 1e-9


def as_polyline(nodes: Iterable[Sequence[float]]) -> Polyline:
    """Normalize a node sequence into an immutable polyline."""
    line = tuple((float(x), float(y)) for x, y in nodes)
    if len(line) < 2:
        raise ValueError(f"a polyline needs at least 2 nodes, got {len(line)}")
    for a, b in zip(line, line[1:]):
        if a == b:
            raise ValueError(f"consecutive nodes must be distinct, got repeated {a}")
    return line


@dataclass(frozen=True)
class BreakwaterSystem:
    """A variable-length collection of breakwater polylines."""

    breakwaters: tuple[Polyline, ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self, "breakwaters", tuple(as_polyline(b) for b in self.breakwaters)
        )

    @classmethod
    def from_lists(cls, lines: Iterable[Iterable[Sequence[float]]]) -> "BreakwaterSystem":
        return cls(tuple(as_polyline(line) for line in lines))

    def to_lists(self) -> list[list[list[float]]]:
        return [[[x, y] for x, y in line] for line in self.breakwaters]

    def segments(self) -> np.ndarray:
        """All segments as an ``(n, 4)`` array of ``x0, y0, x1, y1``."""
        return segments_of(self.breakwaters)

    def __len__(self) -> int:
        return len(self.breakwaters)

    @property
    def n_nodes(self) -> int:
        return sum(len(b) for b in self.breakwaters)


def segments_of(lines: Iterable[Polyline]) -> np.ndarray:
    rows = [
        (a[0], a[1], b[0], b[1]) for line in lines for a, b in zip(line, line[1:])
    ]
    if not rows:
        return np.zeros((0, 4))
    return np.asarray(rows, dtype=float)


def polyline_length(line: Polyline) -> float:
    return sum(math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(line, line[1:]))


def cost(sys: BreakwaterSystem) -> float:
    """Total length of all breakwaters in grid units."""
    return float(sum(polyline_length(line) for line in sys.breakwaters))


# ---------------------------------------------------------------------------
# distances


def point_segment_distance(points: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Pairwise distances between points ``(P, 2)`` and segments ``(S, 4)``.

    Returns a ``(P, S)`` array.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    segs = np.asarray(segs, dtype=float).reshape(-1, 4)
    a = segs[:, 0:2]
    d = segs[:, 2:4] - a
    dd = (d * d).sum(axis=1)
    rel = points[:, None, :] - a[None, :, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        t = (rel * d[None]).sum(axis=-1) / dd
    t = np.where(dd > 0, np.clip(t, 0.0, 1.0), 0.0)
    off = rel - t[..., None] * d[None]
    return np.hypot(off[..., 0], off[..., 1])


def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


def segments_intersect(s: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Pairwise proper-crossing test, ``(S, 4) x (U, 4) -> (S, U)``.

    Touching and collinear overlaps are left to the endpoint distances.
    """
    s = s[:, None, :]
    u = u[None, :, :]
    px, py, rx, ry = s[..., 0], s[..., 1], s[..., 2] - s[..., 0], s[..., 3] - s[..., 1]
    qx, qy, wx, wy = u[..., 0], u[..., 1], u[..., 2] - u[..., 0], u[..., 3] - u[..., 1]
    d1 = _cross(rx, ry, qx - px, qy - py)
    d2 = _cross(rx, ry, qx + wx - px, qy + wy - py)
    d3 = _cross(wx, wy, px - qx, py - qy)
    d4 = _cross(wx, wy, px + rx - qx, py + ry - qy)
    proper = (np.sign(d1) * np.sign(d2) < 0) & (np.sign(d3) * np.sign(d4) < 0)
    return proper


def segment_segment_distance(s: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Pairwise minimum Euclidean distance between two segment sets."""
    s = np.asarray(s, dtype=float).reshape(-1, 4)
    u = np.asarray(u, dtype=float).reshape(-1, 4)
    if len(s) == 0 or len(u) == 0:
        return np.zeros((len(s), len(u)))
    d = np.minimum.reduce(
        [
            point_segment_distance(s[:, 0:2], u),
            point_segment_distance(s[:, 2:4], u),
            point_segment_distance(u[:, 0:2], s).T,
            point_segment_distance(u[:, 2:4], s).T,
        ]
    )
    return np.where(segments_intersect(s, u), 0.0, d)


# ---------------------------------------------------------------------------
# rasterization


def _snap(v: np.ndarray) -> np.ndarray:
    r = np.round(v)
    return np.where(np.abs(v - r) < _SNAP, r, v)


def supercover_cells(x0: float, y0: float, x1: float, y1: float) -> np.ndarray:
    """Integer cells ``(x, y)`` touched by the closed segment, unclipped.

    Every cell whose closed square shares at least one point with the
    segment is reported, so passing exactly through a grid vertex marks all
    four cells around it.
    """
    return np.unique(supercover_many(np.array([[x0, y0, x1, y1]], dtype=np.float64)), axis=0)


def _crossings(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Segment index and parameter ``t`` of every integer crossing strictly inside."""
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    first = np.floor(lo) + 1
    counts = np.where(a != b, np.maximum(np.ceil(hi) - first, 0), 0).astype(np.int64)
    seg = np.repeat(np.arange(len(a)), counts)
    starts = np.cumsum(counts) - counts
    ks = first[seg] + (np.arange(counts.sum()) - starts[seg])
    return seg, (ks - a[seg]) / (b[seg] - a[seg])


def supercover_many(segs: np.ndarray) -> np.ndarray:
    """Supercover cells of many ``(x0, y0, x1, y1)`` segments, with repeats."""
    segs = np.asarray(segs, dtype=np.float64).reshape(-1, 4)
    n = len(segs)
    x0, y0, x1, y1 = segs.T
    sx, tx = _crossings(x0, x1)
    sy, ty = _crossings(y0, y1)
    seg = np.concatenate([np.arange(n), np.arange(n), sx, sy])
    t = np.concatenate([np.zeros(n), np.ones(n), tx, ty])
    order = np.lexsort((t, seg))
    seg, t = seg[order], t[order]
    dx, dy = (x1 - x0)[seg], (y1 - y0)[seg]
    ox, oy = x0[seg], y0[seg]

    # interior of each piece between consecutive crossings
    same = seg[1:] == seg[:-1]
    mids = 0.5 * (t[1:] + t[:-1])[same]
    ms = seg[1:][same]
    mx = np.floor(x0[ms] + mids * (x1 - x0)[ms])
    my = np.floor(y0[ms] + mids * (y1 - y0)[ms])

    # crossing points touch up to four cells
    px = _snap(ox + t * dx)
    py = _snap(oy + t * dy)
    fx, fy = np.floor(px), np.floor(py)
    gx = np.where(px == fx, fx - 1, fx)
    gy = np.where(py == fy, fy - 1, fy)
    xs = np.concatenate([mx, fx, fx, gx, gx])
    ys = np.concatenate([my, fy, gy, fy, gy])
    return np.stack([xs, ys], axis=1).astype(np.int64)


def rasterize_polylines(
    lines: Iterable[Polyline], shape: tuple[int, int], scale: float = 1.0
) -> np.ndarray:
    """Supercover union of polylines on an ``(H, W)`` grid.

    ``scale`` multiplies coordinates first, which rasterizes onto a grid
    refined by that factor.
    """
    h, w = shape
    mask = np.zeros((h, w), dtype=bool)
    cells = supercover_many(segments_of(lines) * scale)
    ok = (cells[:, 0] >= 0) & (cells[:, 0] < w) & (cells[:, 1] >= 0) & (cells[:, 1] < h)
    cells = cells[ok]
    mask[cells[:, 1], cells[:, 0]] = True
    return mask


def rasterize(sys: BreakwaterSystem, dom: "DomainConfig") -> np.ndarray:
    """Boolean ``(H, W)`` obstacle mask of the candidate breakwaters only."""
    return rasterize_polylines(sys.breakwaters, (dom.height, dom.width))


# ---------------------------------------------------------------------------
# constraints


@dataclass
class ConstraintVerdict:
    violations: list[tuple[str, str]] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.feasible

    @property
    def kinds(self) -> set[str]:
        return {kind for kind, _ in self.violations}


def check_constraints(
    sys: BreakwaterSystem,
    dom: "DomainConfig",
    *,
    epsilon: float | None = None,
    check_self_proximity: bool = False,
    first_only: bool = False,
) -> ConstraintVerdict:
    """Evaluate location and distance constraints of a breakwater system.

    ``epsilon`` overrides ``dom.epsilon``. With ``first_only`` the check
    returns as soon as one violation is found.
    """
    eps = dom.epsilon if epsilon is None else epsilon
    verdict = ConstraintVerdict()

    def add(kind: str, detail: str) -> bool:
        verdict.violations.append((kind, detail))
        return first_only

    for j, line in enumerate(sys.breakwaters):
        for i, (x, y) in enumerate(line):
            if not (0.0 <= x < dom.width and 0.0 <= y < dom.height):
                if add("out_of_bounds", f"breakwater {j} node {i} at ({x:g}, {y:g})"):
                    return verdict

    segs = sys.segments()
    if len(segs) == 0:
        return verdict

    h, w = dom.height, dom.width
    prohibited = dom.prohibited_mask | dom.land_mask
    protection = dom.protection_mask
    for k, (x0, y0, x1, y1) in enumerate(segs):
        cells = supercover_cells(x0, y0, x1, y1)
        inside = (cells[:, 0] >= 0) & (cells[:, 0] < w) & (cells[:, 1] >= 0) & (cells[:, 1] < h)
        cells = cells[inside]
        if prohibited[cells[:, 1], cells[:, 0]].any():
            if add("in_prohibited", f"segment {k} crosses land or a prohibited cell"):
                return verdict
        if protection[cells[:, 1], cells[:, 0]].any():
            if add("in_protection", f"segment {k} crosses a target protection area"):
                return verdict

    targets = dom.target_points
    if len(targets):
        dist = point_segment_distance(targets, segs)
        for ti, si in zip(*np.nonzero(dist < eps)):
            if add("too_close_target", f"segment {si} is {dist[ti, si]:.3g} from target {ti}"):
                return verdict

    static = dom.static_segments
    if len(static):
        dist = segment_segment_distance(segs, static)
        for si, ui in zip(*np.nonzero(dist < eps)):
            if add("too_close_structure", f"segment {si} is {dist[si, ui]:.3g} from static segment {ui}"):
                return verdict

    if check_self_proximity:
        for j, line in enumerate(sys.breakwaters):
            own = segments_of([line])
            if len(own) < 3:
                continue
            dist = segment_segment_distance(own, own)
            for a, b in zip(*np.nonzero(dist < eps)):
                if b > a + 1:
                    if add("self_proximity", f"breakwater {j} segments {a} and {b} are {dist[a, b]:.3g} apart"):
                        return verdict
    return verdict


def is_feasible(sys: BreakwaterSystem, dom: "DomainConfig", **kwargs) -> bool:
    return check_constraints(sys, dom, first_only=True, **kwargs).feasible
