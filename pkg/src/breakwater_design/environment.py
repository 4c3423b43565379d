"""Water-area description: grid, bathymetry, wind, targets and fixed structures.

Domain files are YAML documents. Scalars are plain keys; the bathymetry is a
whitespace-separated real matrix (inline block or a referenced text file) and
masks are blocks of ``0``/``1`` digit strings. Matrix rows are written in
array order, so the first line is ``y = 0`` (the southern edge).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from functools import cached_property
from pathlib import Path

import numpy as np
import yaml

from .geometry import Polyline, as_polyline, rasterize_polylines, segments_of

FORMAT_TAG = "breakwater-domain/1"


class DomainError(ValueError):
    """Base class for domain configuration problems."""


class DomainParseError(DomainError):
    pass


class DomainValidationError(DomainError):
    pass


@dataclass(frozen=True, eq=False)
class DomainConfig:
    width: int
    height: int
    bathymetry: np.ndarray
    land_mask: np.ndarray
    prohibited_mask: np.ndarray
    targets: tuple[tuple[int, int], ...]
    static_structures: tuple[Polyline, ...] = ()
    cell_size: float = 10.0
    wind_direction: float = 270.0
    wind_speed: float = 10.0
    epsilon: float = 1.0
    protection_radius: float = 2.0
    name: str = "domain"

    def __post_init__(self):
        bathy = np.array(self.bathymetry, dtype=np.float64)
        land = np.array(self.land_mask, dtype=bool)
        prohibited = np.array(self.prohibited_mask, dtype=bool)
        for arr in (bathy, land, prohibited):
            arr.setflags(write=False)
        object.__setattr__(self, "bathymetry", bathy)
        object.__setattr__(self, "land_mask", land)
        object.__setattr__(self, "prohibited_mask", prohibited)
        object.__setattr__(self, "targets", tuple((int(x), int(y)) for x, y in self.targets))
        object.__setattr__(
            self, "static_structures", tuple(as_polyline(s) for s in self.static_structures)
        )
        self._validate()

    def _validate(self):
        shape = (self.height, self.width)
        if self.width <= 0 or self.height <= 0:
            raise DomainValidationError(f"grid size must be positive, got {self.width}x{self.height}")
        for name in ("bathymetry", "land_mask", "prohibited_mask"):
            arr = getattr(self, name)
            if arr.shape != shape:
                raise DomainValidationError(f"{name} has shape {arr.shape}, expected {shape}")
        if not np.isfinite(self.bathymetry).all():
            raise DomainValidationError("bathymetry contains non-finite values")
        water = ~self.land_mask
        if (self.bathymetry[water] <= 0).any():
            raise DomainValidationError("bathymetry must be positive on every water cell")
        if not self.wind_speed > 0:
            raise DomainValidationError(f"wind_speed must be > 0, got {self.wind_speed}")
        if not 0 <= self.wind_direction < 360:
            raise DomainValidationError(f"wind_direction must be in [0, 360), got {self.wind_direction}")
        if self.epsilon < 0 or self.protection_radius < 0:
            raise DomainValidationError("epsilon and protection_radius must be non-negative")
        for i, (x, y) in enumerate(self.targets):
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise DomainValidationError(f"target {i} at ({x}, {y}) is outside the grid")
            if self.land_mask[y, x]:
                raise DomainValidationError(f"target {i} at ({x}, {y}) lies on land")
            if self.prohibited_mask[y, x]:
                raise DomainValidationError(f"target {i} at ({x}, {y}) lies in a prohibited area")

    # derived views -------------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    @cached_property
    def target_points(self) -> np.ndarray:
        """Target cell centres in continuous coordinates, ``(T, 2)``."""
        if not self.targets:
            return np.zeros((0, 2))
        return np.asarray(self.targets, dtype=float) + 0.5

    @cached_property
    def protection_mask(self) -> np.ndarray:
        """Cells whose centre lies within ``protection_radius`` of a target."""
        yy, xx = np.mgrid[0 : self.height, 0 : self.width]
        mask = np.zeros(self.shape, dtype=bool)
        for tx, ty in self.target_points:
            mask |= np.hypot(xx + 0.5 - tx, yy + 0.5 - ty) <= self.protection_radius
        mask.setflags(write=False)
        return mask

    @cached_property
    def static_segments(self) -> np.ndarray:
        return segments_of(self.static_structures)

    @cached_property
    def static_mask(self) -> np.ndarray:
        mask = rasterize_polylines(self.static_structures, self.shape)
        mask.setflags(write=False)
        return mask

    @cached_property
    def fixed_obstacles(self) -> np.ndarray:
        """Land plus rasterized static structures."""
        mask = self.land_mask | self.static_mask
        mask.setflags(write=False)
        return mask

    @cached_property
    def search_mask(self) -> np.ndarray:
        """Cells where candidate breakwater nodes may be placed."""
        mask = ~(self.land_mask | self.prohibited_mask | self.protection_mask | self.static_mask)
        mask.setflags(write=False)
        return mask

    def replace(self, **changes) -> "DomainConfig":
        kwargs = {f.name: getattr(self, f.name) for f in fields(self)}
        kwargs.update(changes)
        return DomainConfig(**kwargs)

    def __eq__(self, other):
        if not isinstance(other, DomainConfig):
            return NotImplemented
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray):
                if a.shape != b.shape or not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True

    __hash__ = None


# ---------------------------------------------------------------------------
# built-in scenario


def synthetic_case(resolution: int = 64) -> DomainConfig:
    """Square coastal area replicating the reference experiment layout.

    Layout, as fractions of the side length ``n``:

    * land strip along the southern edge, ``y < 0.125 n``;
    * depth ramps linearly from 1 m near the south-west corner to 12 m at the
      north-east corner;
    * two shore-attached L-shaped moles rising to ``y = land + 0.2 n`` at
      ``x = 0.25 n`` and ``x = 0.75 n`` with arms pointing at each other,
      leaving a harbour mouth between ``0.42 n`` and ``0.58 n``;
    * two targets inside the harbour, one in the lee of each arm;
    * a prohibited box at ``x in [0.05 n, 0.2 n)``, ``y in [0.55 n, 0.8 n)``;
    * waves travel towards 260 degrees (south, slightly west) under a
      10 m/s wind.
    """
    n = int(resolution)
    if n < 16:
        raise DomainValidationError(f"synthetic case needs resolution >= 16, got {n}")
    land_h = max(1, round(0.125 * n))
    yy, xx = np.mgrid[0:n, 0:n]
    ramp = (xx / (n - 1) + yy / (n - 1)) / 2.0
    bathymetry = 1.0 + 11.0 * ramp
    land = yy < land_h
    bathymetry = np.where(land, 0.0, bathymetry)

    prohibited = (
        (xx >= round(0.05 * n)) & (xx < round(0.2 * n)) & (yy >= round(0.55 * n)) & (yy < round(0.8 * n))
    )

    arm_y = land_h + 0.2 * n
    west = ((0.25 * n, float(land_h)), (0.25 * n, arm_y), (0.42 * n, arm_y))
    east = ((0.75 * n, float(land_h)), (0.75 * n, arm_y), (0.58 * n, arm_y))
    ty = land_h + int(0.08 * n)
    targets = ((int(0.33 * n), ty), (int(0.67 * n), ty))

    return DomainConfig(
        width=n,
        height=n,
        bathymetry=bathymetry,
        land_mask=land,
        prohibited_mask=prohibited,
        targets=targets,
        static_structures=(west, east),
        cell_size=640.0 / n,
        wind_direction=260.0,
        wind_speed=10.0,
        epsilon=1.0,
        protection_radius=2.0,
        name=f"synthetic-{n}",
    )


# ---------------------------------------------------------------------------
# file format


def format_matrix(arr: np.ndarray) -> str:
    return "\n".join(" ".join(repr(float(v)) for v in row) for row in np.asarray(arr)) + "\n"


def parse_matrix(text: str) -> np.ndarray:
    rows = [line.split() for line in text.strip().splitlines() if line.strip()]
    if not rows:
        raise DomainParseError("empty matrix block")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise DomainParseError("matrix rows have unequal lengths")
    try:
        return np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise DomainParseError(f"non-numeric matrix entry: {exc}") from None


def format_mask(mask: np.ndarray) -> str:
    return "\n".join("".join("1" if v else "0" for v in row) for row in np.asarray(mask)) + "\n"


def parse_mask(text: str) -> np.ndarray:
    rows = [line.strip() for line in text.strip().splitlines() if line.strip()]
    if not rows or any(set(r) - {"0", "1"} for r in rows):
        raise DomainParseError("mask rows must be strings of 0 and 1")
    if len({len(r) for r in rows}) != 1:
        raise DomainParseError("mask rows have unequal lengths")
    return np.array([[c == "1" for c in r] for r in rows], dtype=bool)


def domain_to_text(dom: DomainConfig) -> str:
    doc = {
        "format": FORMAT_TAG,
        "name": dom.name,
        "width": dom.width,
        "height": dom.height,
        "cell_size": float(dom.cell_size),
        "wind_direction": float(dom.wind_direction),
        "wind_speed": float(dom.wind_speed),
        "epsilon": float(dom.epsilon),
        "protection_radius": float(dom.protection_radius),
        "targets": [[x, y] for x, y in dom.targets],
        "static_structures": [[[x, y] for x, y in s] for s in dom.static_structures],
        "bathymetry": format_matrix(dom.bathymetry),
        "land_mask": format_mask(dom.land_mask),
        "prohibited_mask": format_mask(dom.prohibited_mask),
    }
    return yaml.dump(doc, sort_keys=False, default_flow_style=None, width=1 << 20, Dumper=_BlockDumper)


class _BlockDumper(yaml.SafeDumper):
    pass


def _str_presenter(dumper, data):
    style = "|" if "\n" in data else None
    return dumper.represent_scalar("tag:yaml.org,2002:str", data, style=style)


_BlockDumper.add_representer(str, _str_presenter)


def save_domain(dom: DomainConfig, path: str | Path) -> None:
    Path(path).write_text(domain_to_text(dom))


def domain_from_text(text: str, base_dir: Path | None = None) -> DomainConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise DomainParseError(f"malformed domain file: {exc}") from None
    if not isinstance(doc, dict):
        raise DomainParseError("domain file must be a mapping")
    try:
        width, height = int(doc["width"]), int(doc["height"])
        if "bathymetry_file" in doc:
            ref = Path(doc["bathymetry_file"])
            if base_dir is not None and not ref.is_absolute():
                ref = base_dir / ref
            bathymetry = parse_matrix(ref.read_text())
        else:
            bathymetry = parse_matrix(doc["bathymetry"])
        shape = (height, width)
        land = parse_mask(doc["land_mask"]) if "land_mask" in doc else np.zeros(shape, bool)
        prohibited = (
            parse_mask(doc["prohibited_mask"]) if "prohibited_mask" in doc else np.zeros(shape, bool)
        )
        kwargs = dict(
            width=width,
            height=height,
            bathymetry=bathymetry,
            land_mask=land,
            prohibited_mask=prohibited,
            targets=tuple(tuple(t) for t in doc.get("targets") or ()),
            static_structures=tuple(
                tuple(tuple(p) for p in s) for s in doc.get("static_structures") or ()
            ),
        )
    except KeyError as exc:
        raise DomainParseError(f"missing required key {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DomainError):
            raise
        raise DomainParseError(f"malformed field: {exc}") from None
    for key in ("cell_size", "wind_direction", "wind_speed", "epsilon", "protection_radius"):
        if key in doc:
            kwargs[key] = float(doc[key])
    if "name" in doc:
        kwargs["name"] = str(doc["name"])
    try:
        return DomainConfig(**kwargs)
    except DomainError:
        raise
    except ValueError as exc:
        raise DomainValidationError(str(exc)) from None


def load_domain(path: str | Path) -> DomainConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DomainParseError(f"cannot read {path}: {exc}") from None
    return domain_from_text(text, base_dir=path.parent)
