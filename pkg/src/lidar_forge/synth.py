"""Synthetic in-view scenes: deterministic stand-ins for recorded data.

Used by the test suite, the demo fixture generator and the behaviour
scripts. Scenes are sampled directly in the sensor's spherical domain so
every point projects into the grid, with labeled object clusters placed
like street furniture: countable things get instance ids, surfaces get
instance id zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kitti_io
from .kitti_io import PointCloud
from .sensor import SensorModel

__all__ = [
    "ObjectSpec",
    "BACKGROUND_MIX",
    "spherical_to_cartesian",
    "make_background",
    "make_object",
    "make_scene",
    "write_fixture_dataset",
]

# (class id, weight): rough street-scene surface composition, car-heavy on
# purpose so stats output shows the usual class imbalance.
BACKGROUND_MIX = (
    (40, 0.30),   # road
    (48, 0.10),   # sidewalk
    (50, 0.22),   # building
    (70, 0.18),   # vegetation
    (51, 0.05),   # fence
    (72, 0.08),   # terrain
    (44, 0.03),   # parking
    (80, 0.02),   # pole
    (0, 0.02),    # unlabeled
)

FOV_MARGIN = math.radians(0.25)


@dataclass(frozen=True)
class ObjectSpec:
    """One labeled cluster to drop into a scene."""

    semantic_class: int
    instance_id: int
    n_points: int
    center: Optional[tuple[float, float, float]] = None
    spread: float = 0.45


def spherical_to_cartesian(r, azimuth, elevation) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    azimuth = np.asarray(azimuth, dtype=np.float64)
    elevation = np.asarray(elevation, dtype=np.float64)
    horizontal = r * np.cos(elevation)
    return np.stack(
        [horizontal * np.cos(azimuth), horizontal * np.sin(azimuth), r * np.sin(elevation)],
        axis=-1,
    )


def _sample_in_view(
    rng: np.random.Generator,
    n: int,
    sensor: SensorModel,
    range_lo: float = 2.5,
    range_hi: float = 60.0,
) -> np.ndarray:
    r = rng.uniform(range_lo, range_hi, n)
    azimuth = rng.uniform(-math.pi, math.pi, n)
    elevation = rng.uniform(
        sensor.fov_down + FOV_MARGIN, sensor.fov_up - FOV_MARGIN, n
    )
    return spherical_to_cartesian(r, azimuth, elevation)


def make_background(
    rng: np.random.Generator,
    n: int,
    sensor: SensorModel,
    mix: Sequence[tuple[int, float]] = BACKGROUND_MIX,
    intensity: Optional[float] = None,
) -> PointCloud:
    """Unstructured surface points with classes drawn from `mix`."""
    xyz = _sample_in_view(rng, n, sensor)
    classes = np.array([c for c, _ in mix], dtype=np.uint32)
    weights = np.array([w for _, w in mix])
    semantics = classes[rng.choice(len(classes), size=n, p=weights / weights.sum())]
    points = np.empty((n, 4), dtype=np.float32)
    points[:, :3] = xyz.astype(np.float32)
    points[:, 3] = (
        rng.random(n).astype(np.float32) if intensity is None else np.float32(intensity)
    )
    labels = kitti_io.pack_labels(semantics, np.zeros(n, dtype=np.uint32))
    return PointCloud(points, labels)


def _random_center(rng: np.random.Generator) -> np.ndarray:
    """A plausible object position: 7-45 m out, around sensor height."""
    distance = rng.uniform(7.0, 45.0)
    azimuth = rng.uniform(-math.pi, math.pi)
    return np.array(
        [distance * math.cos(azimuth), distance * math.sin(azimuth), rng.uniform(-1.2, -0.4)]
    )


def make_object(
    rng: np.random.Generator,
    spec: ObjectSpec,
    sensor: SensorModel,
    intensity: Optional[float] = None,
) -> PointCloud:
    """A labeled Gaussian cluster, clipped to the sensor's field of view."""
    center = (
        np.asarray(spec.center, dtype=np.float64)
        if spec.center is not None
        else _random_center(rng)
    )
    xyz = center + rng.normal(0.0, spec.spread, (spec.n_points, 3))
    r = np.linalg.norm(xyz, axis=1)
    elevation = np.arcsin(np.clip(xyz[:, 2] / np.maximum(r, 1e-12), -1.0, 1.0))
    ok = (r > 0.5) & (elevation >= sensor.fov_down) & (elevation <= sensor.fov_up)
    xyz = xyz[ok]
    n = len(xyz)
    points = np.empty((n, 4), dtype=np.float32)
    points[:, :3] = xyz.astype(np.float32)
    points[:, 3] = (
        rng.random(n).astype(np.float32) if intensity is None else np.float32(intensity)
    )
    labels = kitti_io.pack_labels(
        np.full(n, spec.semantic_class, dtype=np.uint32),
        np.full(n, spec.instance_id, dtype=np.uint32),
    )
    return PointCloud(points, labels)


def make_scene(
    rng: np.random.Generator,
    sensor: SensorModel,
    n_background: int = 4000,
    objects: Sequence[ObjectSpec] = (),
    intensity: Optional[float] = None,
) -> PointCloud:
    """Background plus object clusters, in one deterministic pass."""
    parts = [make_background(rng, n_background, sensor, intensity=intensity)]
    for spec in objects:
        parts.append(make_object(rng, spec, sensor, intensity=intensity))
    points = np.concatenate([p.points for p in parts])
    labels = np.concatenate([p.labels for p in parts])
    return PointCloud(points, labels)


def _default_objects(rng: np.random.Generator) -> list[ObjectSpec]:
    """A street-like object mix: plenty of cars, occasional rare classes."""
    objects = []
    iid = 1
    for _ in range(int(rng.integers(3, 7))):
        objects.append(ObjectSpec(10, iid, int(rng.integers(60, 320))))
        iid += 1
    rare = [(11, 0.35), (15, 0.25), (18, 0.3), (20, 0.3), (30, 0.4), (31, 0.2), (32, 0.15)]
    for class_id, chance in rare:
        if rng.random() < chance:
            objects.append(ObjectSpec(class_id, iid, int(rng.integers(25, 140))))
            iid += 1
    return objects


def write_fixture_dataset(
    root: Path,
    seed: int,
    sequences: Sequence[str] = ("00",),
    frames_per_sequence: int = 12,
    n_background: int = 3000,
    with_calib: bool = True,
) -> None:
    """Write a small SemanticKITTI-layout dataset of synthetic frames.

    Layout: <root>/sequences/<id>/velodyne/*.bin, labels/*.label,
    poses.txt and calib.txt. Fully determined by the seed.
    """
    root = Path(root)
    sensor = SensorModel()
    for seq in sequences:
        seq_rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((seed, int(seq))))
        )
        seq_dir = root / "sequences" / seq
        pose_lines = []
        heading = 0.0
        position = np.zeros(3)
        for frame in range(frames_per_sequence):
            scene = make_scene(
                seq_rng, sensor, n_background, _default_objects(seq_rng)
            )
            name = f"{frame:06d}"
            kitti_io.write_points(scene, seq_dir / "velodyne" / f"{name}.bin")
            kitti_io.write_labels(scene.labels, seq_dir / "labels" / f"{name}.label")

            heading += float(seq_rng.uniform(-0.02, 0.02))
            c, s = math.cos(heading), math.sin(heading)
            position = position + np.array([1.1 * c, 1.1 * s, 0.0])
            matrix = np.array(
                [[c, -s, 0.0, position[0]], [s, c, 0.0, position[1]], [0.0, 0.0, 1.0, position[2]]]
            )
            pose_lines.append(" ".join(f"{v:.12e}" for v in matrix.reshape(-1)))
        (seq_dir / "poses.txt").write_text("\n".join(pose_lines) + "\n")
        if with_calib:
            (seq_dir / "calib.txt").write_text(
                "P0: " + " ".join(["0"] * 12) + "\n"
                "Tr: 0 -1 0 0 0 0 -1 -0.08 1 0 0 -0.27\n"
            )
