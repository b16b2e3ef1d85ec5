"""Object instance extraction and the injectable-instance database.

Instances are point-wise: every point of a frame labeled with a target
class and instance id forms one instance, kept in original sensor-frame
coordinates together with its original grid cell per point. No box fits,
no ground points. Points whose instance id is zero fall back to Euclidean
connected-component grouping.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import kitti_io
from .kitti_io import PointCloud
from .semantic_kitti import GROUND_CLASSES, THING_CLASSES, class_name
from .sensor import SensorModel, project_cloud

__all__ = [
    "ObjectInstance",
    "InstanceSource",
    "InstanceDatabase",
    "DatabaseManifest",
    "FrameRef",
    "DatabaseFormatError",
    "DB_FORMAT_VERSION",
    "DEFAULT_MIN_POINTS",
    "DEFAULT_LINKAGE_RADIUS",
    "extract_instances",
    "build_database",
    "sample_instance",
    "save_database",
    "load_database",
]

PathLike = Union[str, Path]

DB_MAGIC = b"LFORGEDB"
DB_FORMAT_VERSION = 1
DEFAULT_MIN_POINTS = 20
DEFAULT_LINKAGE_RADIUS = 0.5

_HEADER = struct.Struct("<8sIIIddI32sI")
_ERROR_HEAD = struct.Struct("<III")
_CLASS_HEAD = struct.Struct("<II")
_INSTANCE_HEAD = struct.Struct("<IIII")
_POINT_DTYPE = np.dtype([("xyzi", "<f4", 4), ("row", "<u2"), ("col", "<u2")])


class DatabaseFormatError(ValueError):
    """Database file is corrupt or has an unsupported version."""


class InstanceSource(NamedTuple):
    """Provenance of an instance: where it was cut out."""

    sequence: int
    frame: int
    instance_id: int


@dataclass(frozen=True)
class ObjectInstance:
    """One extracted object: points in the source sensor frame.

    `points` is (K, 4) float32 xyzi; `rows`/`cols` carry each point's
    original grid cell so later placement never re-quantizes the geometry.
    """

    semantic_class: int
    points: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    source: InstanceSource

    def __post_init__(self) -> None:
        k = len(self.points)
        if self.points.ndim != 2 or self.points.shape[1] != 4:
            raise ValueError(f"instance points must be (K, 4), got {self.points.shape}")
        if self.rows.shape != (k,) or self.cols.shape != (k,):
            raise ValueError("rows/cols must match the point count")

    @property
    def point_count(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class BuildError:
    sequence: int
    frame: int
    message: str


@dataclass(frozen=True)
class DatabaseManifest:
    """Summary of a database: format version, source fingerprint, counts."""

    version: int
    fingerprint: bytes
    class_counts: dict[int, int]
    errors: tuple[BuildError, ...] = ()

    def describe(self) -> str:
        lines = [f"database v{self.version}, fingerprint {self.fingerprint.hex()[:16]}"]
        for class_id in sorted(self.class_counts):
            lines.append(
                f"  {class_id:3d} {class_name(class_id)}: {self.class_counts[class_id]}"
            )
        if self.errors:
            lines.append(f"  {len(self.errors)} frame(s) skipped with errors")
        return "\n".join(lines)


@dataclass(frozen=True)
class InstanceDatabase:
    """Immutable collection of injectable instances, grouped by class."""

    sensor: SensorModel
    instances: dict[int, tuple[ObjectInstance, ...]]
    manifest: DatabaseManifest

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(sorted(self.instances))

    def count(self, class_id: int) -> int:
        self._check_class(class_id)
        return len(self.instances[class_id])

    def available(self, class_id: int) -> int:
        """Instance count, zero for a class the database does not hold."""
        return len(self.instances.get(class_id, ()))

    def get(self, class_id: int, ordinal: int) -> ObjectInstance:
        self._check_class(class_id)
        return self.instances[class_id][ordinal]

    def total_instances(self) -> int:
        return sum(len(v) for v in self.instances.values())

    def _check_class(self, class_id: int) -> None:
        if class_id not in self.instances:
            raise KeyError(
                f"class {class_id} ({class_name(class_id)}) is not in this database; "
                f"it holds {sorted(self.instances)}"
            )


class FrameRef(NamedTuple):
    """One labeled frame on disk, addressed for database building."""

    sequence: int
    frame: int
    scan_path: Path
    label_path: Path


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

def _connected_groups(xyz: np.ndarray, radius: float) -> list[np.ndarray]:
    """Group points into Euclidean connected components (single linkage).

    Two points belong together when a chain of neighbours at most `radius`
    apart connects them. Returns index arrays ordered by each group's
    first member.
    """
    n = len(xyz)
    if n == 0:
        return []
    if n == 1:
        return [np.array([0])]
    tree = cKDTree(xyz)
    pairs = tree.query_pairs(r=radius, output_type="ndarray")
    if len(pairs):
        ones = np.ones(len(pairs), dtype=np.int8)
        graph = coo_matrix((ones, (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    else:
        graph = coo_matrix((n, n), dtype=np.int8)
    _, membership = connected_components(graph, directed=False)
    groups = [np.flatnonzero(membership == comp) for comp in np.unique(membership)]
    groups.sort(key=lambda idx: int(idx[0]))
    return groups


def extract_instances(
    cloud: PointCloud,
    sensor: SensorModel,
    classes: Sequence[int],
    min_points: int = DEFAULT_MIN_POINTS,
    *,
    sequence: int = 0,
    frame: int = 0,
    linkage_radius: float = DEFAULT_LINKAGE_RADIUS,
) -> list[ObjectInstance]:
    """Cut every sufficiently large object of the given classes out of a frame.

    Grouping is by (class, instance id); points with instance id 0 are
    grouped by connected components with `linkage_radius` linkage instead.
    Only points that project into the sensor grid are stored (the cell is
    part of the instance). Ground and other surface classes are refused.
    """
    if cloud.labels is None:
        raise ValueError("instance extraction needs a labeled cloud")
    requested = sorted(set(int(c) for c in classes))
    for class_id in requested:
        if class_id in GROUND_CLASSES:
            raise ValueError(f"refusing to extract ground class {class_id} ({class_name(class_id)})")
        if class_id not in THING_CLASSES:
            raise ValueError(
                f"class {class_id} ({class_name(class_id)}) is not a countable "
                "object class and cannot be extracted"
            )

    semantics = kitti_io.semantic_classes(cloud.labels)
    inst_ids = kitti_io.instance_ids(cloud.labels)
    proj = project_cloud(cloud.xyz.astype(np.float64), sensor)

    out: list[ObjectInstance] = []
    for class_id in requested:
        class_mask = semantics == class_id
        if not class_mask.any():
            continue
        groups: list[tuple[int, np.ndarray]] = []

        labeled = np.flatnonzero(class_mask & (inst_ids > 0))
        for iid in np.unique(inst_ids[labeled]):
            groups.append((int(iid), labeled[inst_ids[labeled] == iid]))

        anonymous = np.flatnonzero(class_mask & (inst_ids == 0))
        for comp in _connected_groups(cloud.xyz[anonymous].astype(np.float64), linkage_radius):
            groups.append((0, anonymous[comp]))

        # Deterministic order: anonymous groups (id 0) by first ordinal,
        # then labeled ids ascending.
        groups.sort(key=lambda g: (g[0], int(g[1][0])))

        for iid, idx in groups:
            visible = idx[proj.in_view[idx]]
            if len(visible) < min_points:
                continue
            out.append(
                ObjectInstance(
                    semantic_class=class_id,
                    points=np.ascontiguousarray(cloud.points[visible], dtype=np.float32),
                    rows=proj.rows[visible].astype(np.uint16),
                    cols=proj.cols[visible].astype(np.uint16),
                    source=InstanceSource(sequence, frame, iid),
                )
            )
    return out


def build_database(
    frames: Sequence[FrameRef],
    sensor: SensorModel,
    classes: Sequence[int],
    min_points: int = DEFAULT_MIN_POINTS,
    *,
    linkage_radius: float = DEFAULT_LINKAGE_RADIUS,
) -> InstanceDatabase:
    """Extract instances from every frame into one database.

    Frames are processed in (sequence, frame) order so the result is
    byte-for-byte reproducible. Unreadable frames are skipped and recorded
    in the manifest instead of aborting the build.
    """
    ordered = sorted(frames, key=lambda r: (r.sequence, r.frame))
    per_class: dict[int, list[ObjectInstance]] = {
        int(c): [] for c in sorted(set(classes))
    }
    errors: list[BuildError] = []
    digest = hashlib.sha256()
    digest.update(
        f"{sensor.num_beams} {sensor.num_columns} "
        f"{sensor.fov_up!r} {sensor.fov_down!r} "
        f"{sorted(per_class)} {min_points}\n".encode()
    )
    for ref in ordered:
        digest.update(f"{ref.sequence} {ref.frame}\n".encode())
        try:
            cloud = kitti_io.read_frame(ref.scan_path, ref.label_path)
            found = extract_instances(
                cloud,
                sensor,
                list(per_class),
                min_points,
                sequence=ref.sequence,
                frame=ref.frame,
                linkage_radius=linkage_radius,
            )
        except (OSError, ValueError) as exc:
            errors.append(BuildError(ref.sequence, ref.frame, str(exc)))
            continue
        for inst in found:
            per_class[inst.semantic_class].append(inst)

    manifest = DatabaseManifest(
        version=DB_FORMAT_VERSION,
        fingerprint=digest.digest(),
        class_counts={c: len(v) for c, v in per_class.items()},
        errors=tuple(errors),
    )
    return InstanceDatabase(
        sensor=sensor,
        instances={c: tuple(v) for c, v in per_class.items()},
        manifest=manifest,
    )


def sample_instance(
    db: InstanceDatabase, class_id: int, rng: np.random.Generator
) -> Optional[ObjectInstance]:
    """Uniform draw from one class's instances; None when the class is empty."""
    count = db.count(class_id)
    if count == 0:
        return None
    return db.get(class_id, int(rng.integers(count)))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_database(db: InstanceDatabase, path: PathLike) -> None:
    """Serialize to the versioned little-endian binary format."""
    chunks = [
        _HEADER.pack(
            DB_MAGIC,
            db.manifest.version,
            db.sensor.num_beams,
            db.sensor.num_columns,
            db.sensor.fov_up,
            db.sensor.fov_down,
            len(db.instances),
            db.manifest.fingerprint,
            len(db.manifest.errors),
        )
    ]
    for err in db.manifest.errors:
        msg = err.message.encode()
        chunks.append(_ERROR_HEAD.pack(err.sequence, err.frame, len(msg)))
        chunks.append(msg)
    for class_id in sorted(db.instances):
        members = db.instances[class_id]
        chunks.append(_CLASS_HEAD.pack(class_id, len(members)))
        for inst in members:
            chunks.append(
                _INSTANCE_HEAD.pack(
                    inst.source.sequence,
                    inst.source.frame,
                    inst.source.instance_id,
                    inst.point_count,
                )
            )
            records = np.empty(inst.point_count, dtype=_POINT_DTYPE)
            records["xyzi"] = inst.points
            records["row"] = inst.rows
            records["col"] = inst.cols
            chunks.append(records.tobytes())
    kitti_io._atomic_write(Path(path), b"".join(chunks))


class _Reader:
    """Cursor over the database bytes, tracking the failing instance ordinal."""

    def __init__(self, data: bytes, path: PathLike):
        self.data = data
        self.pos = 0
        self.path = path
        self.record = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DatabaseFormatError(
                f"{self.path}: truncated at byte {self.pos} "
                f"(instance record {self.record})"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out


def load_database(path: PathLike) -> InstanceDatabase:
    """Read a database file back; refuses foreign or mismatched formats."""
    reader = _Reader(Path(path).read_bytes(), path)
    (
        magic,
        version,
        num_beams,
        num_columns,
        fov_up,
        fov_down,
        class_count,
        fingerprint,
        error_count,
    ) = _HEADER.unpack(reader.take(_HEADER.size))
    if magic != DB_MAGIC:
        raise DatabaseFormatError(f"{path}: not an instance database (bad magic)")
    if version != DB_FORMAT_VERSION:
        raise DatabaseFormatError(
            f"{path}: format version {version} is not supported "
            f"(this build reads version {DB_FORMAT_VERSION})"
        )
    sensor = SensorModel(num_beams, num_columns, fov_up, fov_down)

    errors = []
    for _ in range(error_count):
        seq, frame, msg_len = _ERROR_HEAD.unpack(reader.take(_ERROR_HEAD.size))
        errors.append(BuildError(seq, frame, reader.take(msg_len).decode()))

    instances: dict[int, tuple[ObjectInstance, ...]] = {}
    for _ in range(class_count):
        class_id, member_count = _CLASS_HEAD.unpack(reader.take(_CLASS_HEAD.size))
        members = []
        for _ in range(member_count):
            reader.record += 1
            seq, frame, iid, point_count = _INSTANCE_HEAD.unpack(
                reader.take(_INSTANCE_HEAD.size)
            )
            raw = reader.take(point_count * _POINT_DTYPE.itemsize)
            records = np.frombuffer(raw, dtype=_POINT_DTYPE)
            members.append(
                ObjectInstance(
                    semantic_class=class_id,
                    points=np.ascontiguousarray(records["xyzi"]),
                    rows=records["row"].copy(),
                    cols=records["col"].copy(),
                    source=InstanceSource(seq, frame, iid),
                )
            )
        instances[class_id] = tuple(members)
    if reader.pos != len(reader.data):
        raise DatabaseFormatError(
            f"{path}: {len(reader.data) - reader.pos} trailing bytes after "
            f"instance record {reader.record}"
        )

    manifest = DatabaseManifest(
        version=version,
        fingerprint=fingerprint,
        class_counts={c: len(v) for c, v in instances.items()},
        errors=tuple(errors),
    )
    return InstanceDatabase(sensor=sensor, instances=instances, manifest=manifest)
