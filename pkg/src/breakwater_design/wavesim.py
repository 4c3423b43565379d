"""Wave-height oracles.

The built-in model marches wave height across the grid along the wind
direction. Per step it advects laterally, diffuses with a ``(1/4, 1/2, 1/4)``
kernel (diffraction into shadow zones), relaxes towards the local cap
``min(c * U, gamma * depth)`` (regrowth and depth-induced breaking) and
zeroes obstacle cells. The march runs on a grid refined by ``refinement`` and
is repeated for a small fan of directions around the mean wind direction;
component energies are combined and block-averaged back onto the domain grid.

:func:`external_simulate` runs an arbitrary external wave model through a
file exchange directory instead.
"""

from __future__ import annotations

import math
import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .environment import DomainConfig, domain_to_text
from .geometry import BreakwaterSystem, rasterize, rasterize_polylines

PROVENANCES = ("builtin_oracle", "external_model", "surrogate")


class WaveModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class WaveField:
    heights: np.ndarray
    provenance: str = "builtin_oracle"

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")


@dataclass(frozen=True)
class WaveModelParams:
    boundary_coef: float = 0.2  # h0 = boundary_coef * wind_speed, seconds
    breaking_ratio: float = 0.5
    regrowth_rate: float = 0.02  # fraction of the deficit recovered per cell
    kernel: tuple[float, float, float] = (0.25, 0.5, 0.25)
    refinement: int = 4
    n_directions: int = 5
    directional_spread: float = 30.0  # half-width of the direction fan, degrees
    aggregate: str = "sum"

    def __post_init__(self):
        if self.refinement < 1 or self.n_directions < 1:
            raise ValueError("refinement and n_directions must be >= 1")
        if self.aggregate not in ("sum", "max"):
            raise ValueError(f"aggregate must be 'sum' or 'max', got {self.aggregate!r}")
        if abs(sum(self.kernel) - 1.0) > 1e-12 or min(self.kernel) < 0:
            raise ValueError("kernel weights must be non-negative and sum to 1")


DEFAULT_PARAMS = WaveModelParams()


def boundary_height(dom: DomainConfig, params: WaveModelParams = DEFAULT_PARAMS) -> float:
    return params.boundary_coef * dom.wind_speed


def obstacle_mask(sys: BreakwaterSystem, dom: DomainConfig) -> np.ndarray:
    """Land, static structures and the candidate system on the domain grid."""
    return dom.fixed_obstacles | rasterize(sys, dom)


def _direction_fan(params: WaveModelParams) -> list[tuple[float, float]]:
    """``(offset_degrees, weight)`` pairs with cos^2 weighting."""
    n = params.n_directions
    if n == 1:
        return [(0.0, 1.0)]
    offsets = np.linspace(-params.directional_spread, params.directional_spread, n)
    # edges of the fan sit at 60 degrees of the cos^2 lobe
    w = np.cos(np.radians(offsets * 60.0 / max(params.directional_spread, 1e-9))) ** 2
    w = w / w.sum()
    return list(zip(offsets.tolist(), w.tolist()))


def _orient(arr: np.ndarray, transpose: bool, flip_rows: bool, flip_cols: bool) -> np.ndarray:
    if transpose:
        arr = arr.T
    if flip_rows:
        arr = arr[::-1]
    if flip_cols:
        arr = arr[:, ::-1]
    return arr


def _unorient(arr: np.ndarray, transpose: bool, flip_rows: bool, flip_cols: bool) -> np.ndarray:
    if flip_cols:
        arr = arr[:, ::-1]
    if flip_rows:
        arr = arr[::-1]
    if transpose:
        arr = arr.T
    return arr


def _march(
    cap: np.ndarray,
    blocked: np.ndarray,
    h0: float,
    shift: float,
    alpha: float,
    kernel: np.ndarray,
) -> np.ndarray:
    """Propagate from row 0 towards the last row.

    ``shift`` is the lateral displacement per row in cells (``|shift| <= 1``)
    towards increasing column index.
    """
    n_rows, n_cols = cap.shape
    out = np.empty_like(cap)
    h = cap[0].copy()
    h[blocked[0]] = 0.0
    out[0] = h
    a = abs(shift)
    half = len(kernel) // 2
    padded = np.empty(n_cols + 2 * half)
    upstream = np.empty(n_cols)
    for r in range(1, n_rows):
        if a > 0:
            if shift > 0:
                upstream[1:] = h[:-1]
                upstream[0] = h0
            else:
                upstream[:-1] = h[1:]
                upstream[-1] = h0
            h = (1.0 - a) * h + a * upstream
        padded[half:-half] = h
        padded[:half] = h[0]
        padded[-half:] = h[-1]
        h = np.convolve(padded, kernel, mode="valid")
        c = cap[r]
        h += alpha * (c - h)
        np.minimum(h, c, out=h)
        h[blocked[r]] = 0.0
        out[r] = h
    return out


def _fine_kernel(base: Sequence[float], refinement: int) -> np.ndarray:
    # the base kernel applied `refinement` times keeps lateral diffusion per
    # unit travel distance independent of the refinement
    k = np.array([1.0])
    for _ in range(refinement):
        k = np.convolve(k, np.asarray(base, dtype=float))
    return k


def simulate_field(
    blocked_fine: np.ndarray,
    depth_fine: np.ndarray,
    h0: float,
    wind_direction: float,
    params: WaveModelParams = DEFAULT_PARAMS,
) -> np.ndarray:
    """Run the directional march on an already refined grid."""
    r = params.refinement
    cap = np.minimum(h0, params.breaking_ratio * depth_fine)
    cap[blocked_fine] = 0.0
    kernel = _fine_kernel(params.kernel, r)
    energy = np.zeros_like(cap)
    for offset, weight in _direction_fan(params):
        theta = math.radians(wind_direction + offset)
        cx, cy = math.cos(theta), math.sin(theta)
        transpose = abs(cx) > abs(cy)
        along, across = (cx, cy) if transpose else (cy, cx)
        flip_rows = along < 0
        shift = across / abs(along)
        flip_cols = shift < 0
        step = math.hypot(1.0, shift) / r
        alpha = 1.0 - (1.0 - params.regrowth_rate) ** step
        oriented = _march(
            np.ascontiguousarray(_orient(cap, transpose, flip_rows, flip_cols)),
            np.ascontiguousarray(_orient(blocked_fine, transpose, flip_rows, flip_cols)),
            h0,
            abs(shift),
            alpha,
            kernel,
        )
        comp = _unorient(oriented, transpose, flip_rows, flip_cols)
        energy += weight * comp * comp
    return np.sqrt(energy)


def simulate(
    sys: BreakwaterSystem, dom: DomainConfig, params: WaveModelParams = DEFAULT_PARAMS
) -> WaveField:
    """Significant wave height over the domain for a breakwater system.

    The caller is responsible for passing a feasible system.
    """
    r = params.refinement
    h, w = dom.shape
    fine_shape = (h * r, w * r)
    lines = tuple(dom.static_structures) + tuple(sys.breakwaters)
    blocked_fine = np.repeat(np.repeat(dom.land_mask, r, axis=0), r, axis=1)
    blocked_fine = blocked_fine | rasterize_polylines(lines, fine_shape, scale=r)
    depth_fine = np.repeat(np.repeat(dom.bathymetry, r, axis=0), r, axis=1)
    fine = simulate_field(blocked_fine, depth_fine, boundary_height(dom, params), dom.wind_direction, params)
    heights = fine.reshape(h, r, w, r).mean(axis=(1, 3))
    heights[obstacle_mask(sys, dom)] = 0.0
    return WaveField(heights=heights, provenance="builtin_oracle")


def wave_height_at_targets(field: WaveField | np.ndarray, dom: DomainConfig) -> np.ndarray:
    heights = field.heights if isinstance(field, WaveField) else np.asarray(field)
    if heights.shape != dom.shape:
        raise ValueError(f"field shape {heights.shape} does not match domain {dom.shape}")
    if not dom.targets:
        return np.zeros(0)
    xs, ys = zip(*dom.targets)
    return heights[list(ys), list(xs)].astype(float)


def aggregate_heights(target_heights: np.ndarray, mode: str = "sum") -> float:
    """Scalar wave objective from per-target heights."""
    target_heights = np.asarray(target_heights, dtype=float)
    if target_heights.size == 0:
        return 0.0
    if mode == "sum":
        return float(target_heights.sum())
    if mode == "max":
        return float(target_heights.max())
    raise ValueError(f"unknown aggregation {mode!r}")


def wave_objective(field: WaveField, dom: DomainConfig, params: WaveModelParams = DEFAULT_PARAMS) -> float:
    return aggregate_heights(wave_height_at_targets(field, dom), params.aggregate)


# ---------------------------------------------------------------------------
# external model adapter


@dataclass(frozen=True)
class ExternalAdapterConfig:
    """How to call an external wave model.

    The command runs with the exchange directory as its working directory.
    It reads ``domain.txt`` and ``obstacles.txt`` and must write
    ``waves.txt``; exit status 0 means success.
    """

    command: str | tuple[str, ...]
    exchange_dir: str | Path
    timeout: float = 600.0

    def argv(self) -> list[str]:
        if isinstance(self.command, str):
            return shlex.split(self.command)
        return list(self.command)


def write_matrix(path: Path, arr: np.ndarray, fmt: str = "repr") -> None:
    if fmt == "int":
        lines = (" ".join(str(int(v)) for v in row) for row in arr)
    else:
        lines = (" ".join(repr(float(v)) for v in row) for row in arr)
    path.write_text("\n".join(lines) + "\n")


def read_matrix(path: Path) -> np.ndarray:
    rows = [line.split() for line in path.read_text().splitlines() if line.strip()]
    if not rows:
        raise WaveModelError(f"{path.name} is empty")
    if len({len(r) for r in rows}) != 1:
        raise WaveModelError(f"{path.name} has rows of unequal length")
    try:
        return np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise WaveModelError(f"{path.name} contains a non-numeric entry: {exc}") from None


def external_simulate(
    sys: BreakwaterSystem, dom: DomainConfig, adapter: ExternalAdapterConfig
) -> WaveField:
    workdir = Path(adapter.exchange_dir)
    workdir.mkdir(parents=True, exist_ok=True)
    (workdir / "domain.txt").write_text(domain_to_text(dom))
    obstacles = obstacle_mask(sys, dom)
    write_matrix(workdir / "obstacles.txt", obstacles.astype(int), fmt="int")
    out_path = workdir / "waves.txt"
    if out_path.exists():
        out_path.unlink()
    try:
        proc = subprocess.run(
            adapter.argv(), cwd=workdir, capture_output=True, text=True, timeout=adapter.timeout
        )
    except subprocess.TimeoutExpired:
        raise WaveModelError(f"external model timed out after {adapter.timeout:g} s") from None
    except OSError as exc:
        raise WaveModelError(f"cannot start external model: {exc}") from None
    if proc.returncode != 0:
        raise WaveModelError(
            f"external model exited with code {proc.returncode}: {proc.stderr.strip()}"
        )
    if not out_path.exists():
        raise WaveModelError("external model did not write waves.txt")
    heights = read_matrix(out_path)
    if heights.shape != dom.shape:
        raise WaveModelError(f"waves.txt has shape {heights.shape}, expected {dom.shape}")
    if not np.isfinite(heights).all():
        raise WaveModelError("waves.txt contains non-finite values")
    if (heights < 0).any():
        raise WaveModelError("waves.txt contains negative wave heights")
    # external models report dry and structure cells inconsistently
    heights[obstacles] = 0.0
    return WaveField(heights=heights, provenance="external_model")
