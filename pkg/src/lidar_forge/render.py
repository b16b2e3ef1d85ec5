"""Range-image renders for visual inspection and debugging."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence, Union

import numpy as np
from PIL import Image

from . import kitti_io
from .kitti_io import PointCloud
from .semantic_kitti import CLASS_COLORS
from .sensor import SensorModel, build_range_index

__all__ = [
    "range_image_array",
    "class_image_array",
    "provenance_image_array",
    "save_png",
]

FIRST_COLOR = (60, 200, 90)
PARTNER_COLOR = (255, 150, 40)


def _min_entries(cloud: PointCloud, sensor: SensorModel):
    """Per occupied cell: (cell id, ordinal of the closest point, its range)."""
    index = build_range_index(cloud.xyz, sensor, "render")
    if index.entry_count == 0:
        return np.array([], dtype=np.int64), np.array([], dtype=np.int64), np.array([])
    first = np.flatnonzero(np.diff(index.cell_ids, prepend=-1) != 0)
    return index.cell_ids[first], index.ordinals[first], index.ranges[first]


def range_image_array(cloud: PointCloud, sensor: SensorModel) -> np.ndarray:
    """H x W uint8 image: per-cell minimum range, affinely normalized to
    [1, 255] over the occupied cells; empty cells are black (0)."""
    cells, _, ranges = _min_entries(cloud, sensor)
    img = np.zeros(sensor.cell_count, dtype=np.uint8)
    if len(cells):
        top = float(ranges.max())
        img[cells] = 1 + np.round(254.0 * ranges / top).astype(np.uint8)
    return img.reshape(sensor.num_beams, sensor.num_columns)


def class_image_array(cloud: PointCloud, sensor: SensorModel) -> np.ndarray:
    """H x W x 3 uint8 image coloring each cell by the class of its
    closest point; empty cells are black."""
    if cloud.labels is None:
        raise ValueError("class rendering needs a labeled cloud")
    cells, ordinals, _ = _min_entries(cloud, sensor)
    img = np.zeros((sensor.cell_count, 3), dtype=np.uint8)
    if len(cells):
        semantics = kitti_io.semantic_classes(cloud.labels)[ordinals]
        palette = np.zeros((int(max(CLASS_COLORS) + 1), 3), dtype=np.uint8)
        for class_id, color in CLASS_COLORS.items():
            palette[class_id] = color
        known = semantics < len(palette)
        img[cells[known]] = palette[semantics[known]]
        img[cells[~known]] = (255, 255, 255)
    return img.reshape(sensor.num_beams, sensor.num_columns, 3)


def provenance_image_array(
    fused: PointCloud,
    first_count: int,
    sensor: SensorModel,
    colors: Sequence[tuple[int, int, int]] = (FIRST_COLOR, PARTNER_COLOR),
) -> np.ndarray:
    """Color each occupied cell by which parent owns its closest point.

    `first_count` is the number of leading points that came from the first
    parent (fusion output keeps parents contiguous).
    """
    cells, ordinals, _ = _min_entries(fused, sensor)
    img = np.zeros((sensor.cell_count, 3), dtype=np.uint8)
    if len(cells):
        partner = ordinals >= first_count
        img[cells[~partner]] = colors[0]
        img[cells[partner]] = colors[1]
    return img.reshape(sensor.num_beams, sensor.num_columns, 3)


def save_png(array: np.ndarray, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    Image.fromarray(array).save(tmp, format="PNG")
    tmp.replace(path)
