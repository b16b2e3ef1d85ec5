"""SemanticKITTI-format file I/O, pose handling, ego-motion reversal.

Scan files are raw little-endian float32 records of (x, y, z, intensity).
Label files are little-endian uint32 words: semantic class in the low 16
bits, instance id in the high 16 bits. Poses are row-major 3x4 matrices,
one per line. Reading then writing any of these reproduces the file
byte for byte.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.spatial.transform import Rotation

from .sensor import SensorModel, column_of_azimuth

__all__ = [
    "PointCloud",
    "Pose",
    "FormatError",
    "LabelMismatchError",
    "POINT_RECORD_BYTES",
    "pack_label",
    "split_label",
    "pack_labels",
    "semantic_classes",
    "instance_ids",
    "read_points",
    "write_points",
    "read_labels",
    "write_labels",
    "read_frame",
    "write_frame",
    "read_poses",
    "read_calib_velo_to_cam",
    "relative_pose",
    "fractional_pose",
    "undo_ego_motion",
]

PathLike = Union[str, Path]

POINT_RECORD_BYTES = 16  # four little-endian float32 per point
LABEL_RECORD_BYTES = 4
SEMANTIC_MASK = 0xFFFF
INSTANCE_SHIFT = 16


class FormatError(ValueError):
    """A file does not match the expected binary or text layout."""


class LabelMismatchError(ValueError):
    """Scan and label files of one frame disagree on the point count."""


@dataclass(frozen=True)
class PointCloud:
    """An ordered point set: (N, 4) float32 xyzi plus optional packed labels.

    Point order is meaningful and preserved by every operation in this
    package. Labels, when present, run in lockstep with the points.
    """

    points: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        pts = self.points
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"points must be (N, 4), got shape {pts.shape}")
        if pts.dtype != np.float32:
            raise ValueError(f"points must be float32, got {pts.dtype}")
        if self.labels is not None:
            if self.labels.shape != (len(pts),):
                raise ValueError(
                    f"labels shape {self.labels.shape} does not match "
                    f"{len(pts)} points"
                )
            if self.labels.dtype != np.uint32:
                raise ValueError(f"labels must be uint32, got {self.labels.dtype}")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def take(self, selector: np.ndarray) -> "PointCloud":
        """Subset by boolean mask or index array, labels in lockstep."""
        labels = None if self.labels is None else self.labels[selector]
        return PointCloud(self.points[selector], labels)

    def with_coords(self, xyz: np.ndarray) -> "PointCloud":
        """Replace coordinates (cast to float32), keep intensity and labels."""
        pts = self.points.copy()
        pts[:, :3] = np.asarray(xyz, dtype=np.float32)
        return PointCloud(pts, self.labels)


# ---------------------------------------------------------------------------
# Label word packing
# ---------------------------------------------------------------------------

def pack_label(semantic_class: int, instance_id: int) -> int:
    if not 0 <= semantic_class <= SEMANTIC_MASK:
        raise ValueError(f"semantic class {semantic_class} does not fit 16 bits")
    if not 0 <= instance_id <= SEMANTIC_MASK:
        raise ValueError(f"instance id {instance_id} does not fit 16 bits")
    return (instance_id << INSTANCE_SHIFT) | semantic_class


def split_label(word: int) -> tuple[int, int]:
    """Packed uint32 -> (semantic_class, instance_id)."""
    return int(word) & SEMANTIC_MASK, (int(word) >> INSTANCE_SHIFT) & SEMANTIC_MASK


def pack_labels(semantic: np.ndarray, instance: np.ndarray) -> np.ndarray:
    sem = np.asarray(semantic, dtype=np.uint32)
    inst = np.asarray(instance, dtype=np.uint32)
    return (inst << INSTANCE_SHIFT) | (sem & SEMANTIC_MASK)


def semantic_classes(labels: np.ndarray) -> np.ndarray:
    return (labels & SEMANTIC_MASK).astype(np.uint16)


def instance_ids(labels: np.ndarray) -> np.ndarray:
    return (labels >> INSTANCE_SHIFT).astype(np.uint16)


# ---------------------------------------------------------------------------
# Scan / label files
# ---------------------------------------------------------------------------

def read_points(path: PathLike) -> PointCloud:
    """Read a .bin scan. Non-finite points are kept (with a warning)."""
    raw = Path(path).read_bytes()
    if len(raw) % POINT_RECORD_BYTES != 0:
        usable = len(raw) - len(raw) % POINT_RECORD_BYTES
        raise FormatError(
            f"{path}: truncated scan, {len(raw)} bytes is not a multiple of "
            f"{POINT_RECORD_BYTES} (last whole record ends at byte {usable})"
        )
    pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    if not np.isfinite(pts).all():
        bad = int((~np.isfinite(pts).all(axis=1)).sum())
        warnings.warn(f"{path}: {bad} non-finite points retained", stacklevel=2)
    return PointCloud(np.ascontiguousarray(pts))


def write_points(cloud: PointCloud, path: PathLike) -> None:
    _atomic_write(Path(path), np.ascontiguousarray(cloud.points, dtype="<f4").tobytes())


def read_labels(path: PathLike) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % LABEL_RECORD_BYTES != 0:
        usable = len(raw) - len(raw) % LABEL_RECORD_BYTES
        raise FormatError(
            f"{path}: truncated label file, {len(raw)} bytes is not a multiple "
            f"of {LABEL_RECORD_BYTES} (last whole record ends at byte {usable})"
        )
    return np.frombuffer(raw, dtype="<u4").copy()


def write_labels(labels: np.ndarray, path: PathLike) -> None:
    _atomic_write(Path(path), np.ascontiguousarray(labels, dtype="<u4").tobytes())


def read_frame(scan_path: PathLike, label_path: PathLike) -> PointCloud:
    """Read one scan together with its labels, validating the counts."""
    cloud = read_points(scan_path)
    labels = read_labels(label_path)
    if len(labels) != len(cloud):
        raise LabelMismatchError(
            f"{scan_path} holds {len(cloud)} points but {label_path} holds "
            f"{len(labels)} labels"
        )
    return PointCloud(cloud.points, labels)


def write_frame(cloud: PointCloud, scan_path: PathLike, label_path: PathLike) -> None:
    if cloud.labels is None:
        raise ValueError("cloud has no labels to write")
    write_points(cloud, scan_path)
    write_labels(cloud.labels, label_path)


def _atomic_write(path: Path, data: bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see a
    half-written file and failed runs leave no partial outputs."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Poses and calibration
# ---------------------------------------------------------------------------

ORTHONORMAL_TOL = 1e-6


@dataclass(frozen=True)
class Pose:
    """Rigid transform: 3x3 rotation (orthonormal) plus translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("pose needs a 3x3 rotation and length-3 translation")
        err = float(np.abs(r @ r.T - np.eye(3)).max())
        if err > ORTHONORMAL_TOL:
            raise ValueError(f"rotation is not orthonormal (deviation {err:.2e})")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other: (self o other)(p) = self(other(p))."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, xyz: np.ndarray) -> np.ndarray:
        return np.asarray(xyz, dtype=np.float64) @ self.rotation.T + self.translation


def read_poses(path: PathLike) -> list[Pose]:
    """Parse a poses.txt of row-major 3x4 matrices, one per line."""
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 12:
                raise FormatError(
                    f"{path}:{lineno}: expected 12 values, got {len(fields)}"
                )
            try:
                values = np.array([float(v) for v in fields]).reshape(3, 4)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            poses.append(Pose(values[:, :3], values[:, 3]))
    return poses


def read_calib_velo_to_cam(path: PathLike) -> Optional[Pose]:
    """Extract the 'Tr:' lidar-to-camera transform from a calib.txt."""
    with open(path) as fh:
        for line in fh:
            key, _, rest = line.partition(":")
            if key.strip() != "Tr":
                continue
            fields = rest.split()
            if len(fields) != 12:
                raise FormatError(f"{path}: Tr line has {len(fields)} values, expected 12")
            values = np.array([float(v) for v in fields]).reshape(3, 4)
            return Pose(values[:, :3], values[:, 3])
    return None


def relative_pose(
    pose_prev: Pose, pose_curr: Pose, velo_to_cam: Optional[Pose] = None
) -> Pose:
    """Ego displacement between two recorded poses, in the lidar frame.

    Odometry poses are camera poses; when the calibration transform is
    supplied the camera-frame displacement is conjugated into the lidar
    frame. Without it the displacement is used as stored.
    """
    delta = pose_prev.inverse().compose(pose_curr)
    if velo_to_cam is not None:
        delta = velo_to_cam.inverse().compose(delta).compose(velo_to_cam)
    return delta


def fractional_pose(delta: Pose, fraction: float) -> Pose:
    """Fraction s of a rigid displacement: slerp rotation, lerp translation.

    fraction 0 gives the identity, fraction 1 gives delta itself.
    """
    rotvec = Rotation.from_matrix(delta.rotation).as_rotvec()
    rot = Rotation.from_rotvec(fraction * rotvec).as_matrix()
    return Pose(rot, fraction * delta.translation)


def undo_ego_motion(
    cloud: PointCloud, pose_prev: Pose, pose_curr: Pose, sensor: SensorModel
) -> PointCloud:
    """Reverse the per-point ego-motion compensation of one sweep.

    Each point's sweep fraction is s = col / W with the column taken from
    its azimuth (column 0 is the sweep start). The ego displacement over
    the sweep, delta = pose_prev^-1 o pose_curr, is fractionally applied
    at s and inverted, restoring the geometry the moving sensor actually
    measured. Intensity, labels and point order are untouched; degenerate
    points stay where they are.
    """
    xyz = cloud.xyz.astype(np.float64)
    ranges = np.linalg.norm(xyz, axis=1)
    movable = np.isfinite(ranges) & (ranges > 0.0)

    azimuth = np.zeros(len(xyz))
    azimuth[movable] = np.arctan2(xyz[movable, 1], xyz[movable, 0])
    cols = column_of_azimuth(azimuth, sensor)

    delta = pose_prev.inverse().compose(pose_curr)
    rotvec = Rotation.from_matrix(delta.rotation).as_rotvec()
    w = sensor.num_columns
    fractions = np.arange(w, dtype=np.float64) / w
    # One transform per column: R(s) = slerp(I -> R_delta, s), t(s) = s * t.
    col_rots = Rotation.from_rotvec(np.outer(fractions, rotvec)).as_matrix()
    col_trans = np.outer(fractions, delta.translation)

    # Inverse displacement: p' = R(s)^T (p - t(s)).
    shifted = xyz - col_trans[cols]
    undone = np.einsum("nji,nj->ni", col_rots[cols], shifted)
    undone[~movable] = xyz[~movable]
    return cloud.with_coords(undone)
