"""Sensor geometry: beam grid, spherical projection, range image index.

The projection maps Cartesian sensor-frame points onto the H x W cell grid
of a rotating lidar. Column 0 corresponds to azimuth pi (the sweep start),
columns increase clockwise; row 0 is the top beam. All angles are radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Optional

import numpy as np

__all__ = [
    "SensorModel",
    "SphericalPoint",
    "CellIndex",
    "RangeImage",
    "DegeneratePointError",
    "to_spherical",
    "project",
    "project_cloud",
    "column_of_azimuth",
    "build_range_index",
]

TWO_PI = 2.0 * math.pi


class DegeneratePointError(ValueError):
    """Raised for points with no direction (zero range or non-finite)."""


@dataclass(frozen=True)
class SensorModel:
    """Beam grid of a rotating lidar.

    num_beams vertically stacked beams are spread uniformly (in elevation)
    between fov_down and fov_up; one revolution is split into num_columns
    azimuth bins of width 2*pi/num_columns.
    """

    num_beams: int = 64
    num_columns: int = 2048
    fov_up: float = math.radians(3.0)
    fov_down: float = math.radians(-25.0)

    def __post_init__(self) -> None:
        if self.num_beams < 1:
            raise ValueError(f"num_beams must be >= 1, got {self.num_beams}")
        if self.num_columns < 2 or self.num_columns % 2 != 0:
            raise ValueError(
                f"num_columns must be an even integer >= 2, got {self.num_columns}"
            )
        if not self.fov_up > self.fov_down:
            raise ValueError(
                f"fov_up ({self.fov_up}) must be greater than fov_down ({self.fov_down})"
            )

    @property
    def azimuth_resolution(self) -> float:
        """Angular width of one column, 2*pi / num_columns."""
        return TWO_PI / self.num_columns

    @property
    def fov_span(self) -> float:
        return self.fov_up - self.fov_down

    @property
    def cell_count(self) -> int:
        return self.num_beams * self.num_columns


@dataclass(frozen=True)
class SphericalPoint:
    """Range (metres), azimuth in (-pi, pi], elevation in [-pi/2, pi/2]."""

    range: float
    azimuth: float
    elevation: float


class CellIndex(NamedTuple):
    row: int
    col: int


def to_spherical(point) -> SphericalPoint:
    """Convert one Cartesian (x, y, z) point to spherical coordinates.

    Raises DegeneratePointError for the origin or non-finite input: such a
    point has no direction and cannot be projected.
    """
    x, y, z = (float(v) for v in point[:3])
    rng = math.sqrt(x * x + y * y + z * z)
    if not math.isfinite(rng) or rng == 0.0:
        raise DegeneratePointError(f"point ({x}, {y}, {z}) has no direction")
    # Clamp the asin argument: |z| can exceed rng by one ulp.
    s = min(1.0, max(-1.0, z / rng))
    return SphericalPoint(rng, math.atan2(y, x), math.asin(s))


def project(sp: SphericalPoint, sensor: SensorModel) -> Optional[CellIndex]:
    """Map a spherical point to its grid cell, or None when out of view.

    A point is out of view exactly when its elevation lies outside
    [fov_down, fov_up]. Column and row are floor-quantized and clamped to
    the valid index range, so elevation == fov_up lands on row 0 and
    azimuth == pi lands on column 0.
    """
    if not (sensor.fov_down <= sp.elevation <= sensor.fov_up):
        return None
    w = sensor.num_columns
    h = sensor.num_beams
    col = int(math.floor(0.5 * (1.0 - sp.azimuth / math.pi) * w))
    col = min(max(col, 0), w - 1)
    row = int(math.floor((1.0 - (sp.elevation - sensor.fov_down) / sensor.fov_span) * h))
    row = min(max(row, 0), h - 1)
    return CellIndex(row, col)


def column_of_azimuth(azimuth: np.ndarray, sensor: SensorModel) -> np.ndarray:
    """Vectorized azimuth -> column mapping (no field-of-view test)."""
    w = sensor.num_columns
    cols = np.floor(0.5 * (1.0 - azimuth / np.pi) * w).astype(np.int64)
    return np.clip(cols, 0, w - 1)


class CloudProjection(NamedTuple):
    """Per-point projection results for an (N, 3) coordinate array."""

    rows: np.ndarray      # (N,) int64, valid only where in_view
    cols: np.ndarray      # (N,) int64, valid only where in_view
    ranges: np.ndarray    # (N,) float64
    in_view: np.ndarray   # (N,) bool


def project_cloud(xyz: np.ndarray, sensor: SensorModel) -> CloudProjection:
    """Project every point of an (N, 3) array onto the sensor grid.

    Non-finite and zero-range points are marked out of view rather than
    raising; the caller decides how to carry them.
    """
    pts = np.asarray(xyz, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) coordinates, got shape {pts.shape}")
    ranges = np.linalg.norm(pts, axis=1)
    usable = np.isfinite(ranges) & (ranges > 0.0)

    azimuth = np.zeros(len(pts))
    elevation = np.zeros(len(pts))
    with np.errstate(invalid="ignore", divide="ignore"):
        azimuth[usable] = np.arctan2(pts[usable, 1], pts[usable, 0])
        elevation[usable] = np.arcsin(
            np.clip(pts[usable, 2] / ranges[usable], -1.0, 1.0)
        )

    in_view = usable & (elevation >= sensor.fov_down) & (elevation <= sensor.fov_up)
    cols = column_of_azimuth(azimuth, sensor)
    rows = np.floor(
        (1.0 - (elevation - sensor.fov_down) / sensor.fov_span) * sensor.num_beams
    ).astype(np.int64)
    rows = np.clip(rows, 0, sensor.num_beams - 1)
    return CloudProjection(rows, cols, ranges, in_view)


@dataclass(frozen=True)
class RangeImage:
    """Sorted index of a cloud's in-view points on the sensor grid.

    Entries are stored flat, ordered by (cell, range ascending, ordinal),
    so each occupied cell is one contiguous run already sorted by range.
    `ordinals` index into the source cloud; `out_of_view` lists the
    ordinals that do not project (they are never silently dropped).
    All entries share one provenance tag naming the parent cloud.
    """

    sensor: SensorModel
    tag: str
    rows: np.ndarray        # (M,) int64
    cols: np.ndarray        # (M,) int64
    ranges: np.ndarray      # (M,) float64
    ordinals: np.ndarray    # (M,) int64
    out_of_view: np.ndarray  # (K,) int64

    @cached_property
    def cell_ids(self) -> np.ndarray:
        return self.rows * self.sensor.num_columns + self.cols

    @property
    def entry_count(self) -> int:
        return len(self.ordinals)

    def occupied_cell_count(self) -> int:
        if self.entry_count == 0:
            return 0
        return int(len(np.unique(self.cell_ids)))

    def cell_entries(self, row: int, col: int) -> list[tuple[int, float]]:
        """(ordinal, range) pairs of one cell, ascending by range."""
        cell = row * self.sensor.num_columns + col
        lo = int(np.searchsorted(self.cell_ids, cell, side="left"))
        hi = int(np.searchsorted(self.cell_ids, cell, side="right"))
        return [
            (int(self.ordinals[i]), float(self.ranges[i])) for i in range(lo, hi)
        ]

    def min_range_grid(self) -> np.ndarray:
        """Dense (H*W,) array of per-cell minimum range, +inf where empty.

        Relies on entries being sorted ascending within each cell: writing
        them in reverse order leaves each cell's minimum as the last write.
        """
        grid = np.full(self.sensor.cell_count, np.inf)
        if self.entry_count:
            grid[self.cell_ids[::-1]] = self.ranges[::-1]
        return grid


def build_range_index(cloud_xyz: np.ndarray, sensor: SensorModel, tag: str) -> RangeImage:
    """Index an (N, 3) coordinate array on the sensor grid.

    An empty input yields an empty index, not an error.
    """
    proj = project_cloud(np.asarray(cloud_xyz).reshape(-1, 3), sensor)
    inside = np.flatnonzero(proj.in_view)
    outside = np.flatnonzero(~proj.in_view)
    rows = proj.rows[inside]
    cols = proj.cols[inside]
    ranges = proj.ranges[inside]
    cells = rows * sensor.num_columns + cols
    order = np.lexsort((inside, ranges, cells))
    return RangeImage(
        sensor=sensor,
        tag=tag,
        rows=rows[order],
        cols=cols[order],
        ranges=ranges[order],
        ordinals=inside[order].astype(np.int64),
        out_of_view=outside.astype(np.int64),
    )
