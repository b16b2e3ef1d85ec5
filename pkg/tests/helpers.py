"""Construction helpers shared by the test modules."""

import hashlib
from pathlib import Path

import numpy as np

from lidar_forge import ObjectInstance, PointCloud, SensorModel
from lidar_forge.instances import (
    DB_FORMAT_VERSION,
    DatabaseManifest,
    InstanceDatabase,
    InstanceSource,
)
from lidar_forge.sensor import project_cloud
from lidar_forge.synth import make_background


def sensor_shape(sensor: SensorModel):
    """The tuple the oracle functions take the sensor as."""
    return sensor.num_beams, sensor.num_columns, sensor.fov_up, sensor.fov_down


def labeled_cloud(rng, n, sensor, intensity=None) -> PointCloud:
    return make_background(rng, n, sensor, intensity=intensity)


def make_instance(
    rng,
    sensor,
    semantic_class=11,
    n_points=80,
    center=None,
    spread=0.4,
    intensity=None,
    source=InstanceSource(0, 0, 1),
) -> ObjectInstance:
    """A Gaussian cluster packaged the way extraction would store it:
    float32 xyzi plus each point's grid cell, in-view points only."""
    if center is None:
        d = rng.uniform(8.0, 40.0)
        az = rng.uniform(-np.pi, np.pi)
        center = np.array([d * np.cos(az), d * np.sin(az), rng.uniform(-1.0, -0.3)])
    xyz = np.asarray(center) + rng.normal(0.0, spread, (n_points, 3))
    points = np.empty((len(xyz), 4), dtype=np.float32)
    points[:, :3] = xyz.astype(np.float32)
    points[:, 3] = (
        rng.random(len(xyz)).astype(np.float32)
        if intensity is None
        else np.float32(intensity)
    )
    proj = project_cloud(points[:, :3].astype(np.float64), sensor)
    keep = proj.in_view
    return ObjectInstance(
        semantic_class=semantic_class,
        points=np.ascontiguousarray(points[keep]),
        rows=proj.rows[keep].astype(np.uint16),
        cols=proj.cols[keep].astype(np.uint16),
        source=source,
    )


def make_db(sensor, by_class) -> InstanceDatabase:
    """Wrap {class_id: [instances]} into an in-memory database."""
    instances = {int(c): tuple(v) for c, v in by_class.items()}
    manifest = DatabaseManifest(
        version=DB_FORMAT_VERSION,
        fingerprint=bytes(32),
        class_counts={c: len(v) for c, v in instances.items()},
    )
    return InstanceDatabase(sensor=sensor, instances=instances, manifest=manifest)


def radial_variants(rng, cloud_xyz, count, factors=(0.75, 1.3)):
    """Points sharing cells with `cloud_xyz` by construction: pick random
    points and rescale them along their own ray, so azimuth and elevation
    (hence the cell) are untouched while the range moves."""
    picks = rng.integers(len(cloud_xyz), size=count)
    scale = rng.uniform(*factors, size=count)
    return cloud_xyz[picks] * scale[:, None]


def tree_hash(root: Path) -> str:
    """One digest over every file under root, path-ordered."""
    root = Path(root)
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(str(path.relative_to(root)).encode())
        digest.update(b"\0")
        digest.update(path.read_bytes())
        digest.update(b"\0")
    return digest.hexdigest()
