"""Structure-preserving augmentation: global transforms, scene fusion,
occlusion-checked object injection, and the per-frame pipeline.

Every operation keeps points as unmodified copies of their parents (up to
the rigid transform applied to a whole cloud or instance); nothing is
interpolated or synthesized. Cell-level visibility conflicts are settled
by range competition: the closer surface wins, ties inside range_epsilon
go to the cloud already in place.

Randomness discipline: each frame gets one numpy Generator and every
decision draws from it in a fixed documented order, so a (config, seed,
inputs) triple reproduces the output bit for bit, on any worker layout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Mapping, Optional, Protocol, Sequence, Union

import numpy as np

from . import kitti_io
from .instances import InstanceDatabase, InstanceSource, ObjectInstance, sample_instance
from .kitti_io import PointCloud
from .semantic_kitti import DEFAULT_INJECTION_CLASSES
from .sensor import SensorModel, build_range_index

__all__ = [
    "AugmentConfig",
    "ConfigError",
    "ClassDistribution",
    "Placement",
    "GlobalRecord",
    "FusionRecord",
    "InjectionRecord",
    "InjectionSummary",
    "AugmentReport",
    "ScenePool",
    "InMemoryScenePool",
    "admissible_rotation_steps",
    "quantized_rotation",
    "flip",
    "point_drop",
    "draw_placement",
    "apply_placement",
    "place_instance",
    "global_augment",
    "compute_distribution",
    "inject_instance",
    "balance_inject",
    "fuse_scenes",
    "augment_frame",
    "make_frame_key",
    "frame_generator",
]


class ConfigError(ValueError):
    """Invalid augmentation configuration."""


@dataclass(frozen=True)
class AugmentConfig:
    """Tunables of the augmentation pipeline.

    The defaults are the training settings this pipeline was built around:
    half of the frames get global transforms, 30% are fused with a second
    scene, half receive up to three injections targeting a 2% share for
    every injection class.
    """

    p_global: float = 0.5
    p_fusion: float = 0.3
    p_inject: float = 0.5
    max_injections: int = 3
    desired_share: float = 0.02
    injection_classes: tuple[int, ...] = DEFAULT_INJECTION_CLASSES
    fusion_rotation_limit: float = math.radians(10.0)
    global_rotation_limit: float = math.pi
    point_drop_rate: float = 0.05
    range_epsilon: float = 0.05
    max_attempts_factor: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("p_global", "p_fusion", "p_inject", "point_drop_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if not 0.0 <= self.desired_share < 1.0:
            raise ConfigError(f"desired_share must lie in [0, 1), got {self.desired_share}")
        if self.max_injections < 0:
            raise ConfigError(f"max_injections must be >= 0, got {self.max_injections}")
        if self.max_attempts_factor < 1:
            raise ConfigError(
                f"max_attempts_factor must be >= 1, got {self.max_attempts_factor}"
            )
        for name in ("fusion_rotation_limit", "global_rotation_limit"):
            value = getattr(self, name)
            if not 0.0 <= value <= math.pi:
                raise ConfigError(f"{name} must lie in [0, pi], got {value}")
        if self.range_epsilon < 0.0:
            raise ConfigError(f"range_epsilon must be >= 0, got {self.range_epsilon}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if not self.injection_classes:
            raise ConfigError("injection_classes must not be empty")
        object.__setattr__(
            self,
            "injection_classes",
            tuple(sorted(int(c) for c in self.injection_classes)),
        )

    @classmethod
    def from_dict(cls, data: Mapping) -> "AugmentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "AugmentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        if "injection_classes" in data:
            data = dict(data, injection_classes=tuple(data["injection_classes"]))
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
            for f in fields(self)
        }


# ---------------------------------------------------------------------------
# Per-frame seeding
# ---------------------------------------------------------------------------

def make_frame_key(sequence: int, frame: int) -> int:
    """Stable integer key for a frame within a dataset."""
    return (int(sequence) << 32) | int(frame)


def frame_generator(seed: int, frame_key: int) -> np.random.Generator:
    """The one RNG a frame's augmentation draws from.

    Derived by hashing (seed, frame_key) through numpy's SeedSequence, so
    the stream is independent of processing order and worker layout.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, frame_key))))


# ---------------------------------------------------------------------------
# Elementary transforms
# ---------------------------------------------------------------------------

def admissible_rotation_steps(limit: float, sensor: SensorModel) -> int:
    """Largest k with k * (2*pi/W) <= limit, capped at a half turn."""
    if limit < 0:
        raise ValueError(f"rotation limit must be >= 0, got {limit}")
    step = sensor.azimuth_resolution
    k = int(math.floor(limit / step + 1e-9))
    return min(k, sensor.num_columns // 2)


def quantized_rotation(
    cloud: PointCloud, k: int, sensor: SensorModel, limit: Optional[float] = None
) -> PointCloud:
    """Rotate about the sensor axis by exactly k columns (k * 2*pi/W).

    Restricting rotations to whole column steps turns them into cyclic
    column shifts of the grid: cell occupancy moves, it never smears.
    """
    kmax = admissible_rotation_steps(math.pi if limit is None else limit, sensor)
    if abs(k) > kmax:
        raise ValueError(f"rotation of {k} steps exceeds the admissible range +-{kmax}")
    if k == 0:
        return cloud
    theta = k * sensor.azimuth_resolution
    c, s = math.cos(theta), math.sin(theta)
    xyz = cloud.xyz.astype(np.float64)
    rotated = np.empty_like(xyz)
    rotated[:, 0] = c * xyz[:, 0] - s * xyz[:, 1]
    rotated[:, 1] = s * xyz[:, 0] + c * xyz[:, 1]
    rotated[:, 2] = xyz[:, 2]
    return cloud.with_coords(rotated)


def flip(cloud: PointCloud, axis: str) -> PointCloud:
    """Mirror the cloud by negating one coordinate ('x' or 'y')."""
    try:
        column = {"x": 0, "y": 1}[axis]
    except KeyError:
        raise ValueError(f"flip axis must be 'x' or 'y', got {axis!r}") from None
    pts = cloud.points.copy()
    pts[:, column] = -pts[:, column]
    return PointCloud(pts, cloud.labels)


def point_drop(cloud: PointCloud, rate: float, rng: np.random.Generator) -> PointCloud:
    """Remove each point independently with the given probability."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"drop rate must lie in [0, 1], got {rate}")
    if rate == 0.0 or len(cloud) == 0:
        return cloud
    return cloud.take(rng.random(len(cloud)) >= rate)


@dataclass(frozen=True)
class Placement:
    """A drawn rigid placement: quantized rotation, optional mirrors, drop."""

    rotation_steps: int = 0
    flip_x: bool = False
    flip_y: bool = False
    drop_rate: float = 0.0


IDENTITY_PLACEMENT = Placement()


def draw_placement(
    rng: np.random.Generator, limit: float, drop_rate: float, sensor: SensorModel
) -> Placement:
    """Draw rotation steps (uniform over the admissible range) and flips.

    Draw order: rotation steps, flip-x, flip-y. The drop mask is drawn
    later, by apply_placement, because its length depends on the cloud.
    """
    kmax = admissible_rotation_steps(limit, sensor)
    k = int(rng.integers(-kmax, kmax + 1))
    flip_x = bool(rng.random() < 0.5)
    flip_y = bool(rng.random() < 0.5)
    return Placement(k, flip_x, flip_y, drop_rate)


def apply_placement(
    cloud: PointCloud,
    placement: Placement,
    sensor: SensorModel,
    rng: np.random.Generator,
) -> PointCloud:
    """Apply rotation, then flips, then point drop, in that order."""
    out = quantized_rotation(cloud, placement.rotation_steps, sensor)
    if placement.flip_x:
        out = flip(out, "x")
    if placement.flip_y:
        out = flip(out, "y")
    return point_drop(out, placement.drop_rate, rng)


def place_instance(
    instance: ObjectInstance,
    placement: Placement,
    sensor: SensorModel,
    rng: np.random.Generator,
) -> ObjectInstance:
    """Apply a placement to an instance, carrying its grid cells along.

    Coordinates get the same rotation/flip/drop treatment as a cloud, but
    the stored columns are transformed by the corresponding exact column
    permutations instead of being re-quantized, so the object's raster
    footprint survives the float rounding of the rotation. Rows never
    change: rotation and mirrors preserve elevation. For a point exactly
    on a cell boundary the permuted column is the limit from inside its
    cell.
    """
    w = sensor.num_columns
    pts = instance.points.copy()
    cols = instance.cols.astype(np.int64)

    k = placement.rotation_steps
    if k != 0:
        theta = k * sensor.azimuth_resolution
        c, s = math.cos(theta), math.sin(theta)
        xy = pts[:, :2].astype(np.float64)
        pts[:, 0] = (c * xy[:, 0] - s * xy[:, 1]).astype(np.float32)
        pts[:, 1] = (s * xy[:, 0] + c * xy[:, 1]).astype(np.float32)
        cols = (cols - k) % w
    if placement.flip_x:
        pts[:, 0] = -pts[:, 0]
        cols = (w // 2 - 1 - cols) % w
    if placement.flip_y:
        pts[:, 1] = -pts[:, 1]
        cols = (w - 1 - cols) % w

    keep = slice(None)
    if placement.drop_rate > 0.0 and len(pts):
        keep = rng.random(len(pts)) >= placement.drop_rate
    return ObjectInstance(
        semantic_class=instance.semantic_class,
        points=np.ascontiguousarray(pts[keep]),
        rows=instance.rows[keep].copy(),
        cols=cols[keep].astype(np.uint16),
        source=instance.source,
    )


# ---------------------------------------------------------------------------
# Global augmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GlobalRecord:
    rotation_steps: int
    flip_x: bool
    flip_y: bool
    points_dropped: int

    def to_dict(self) -> dict:
        return {
            "rotation_steps": self.rotation_steps,
            "flip_x": self.flip_x,
            "flip_y": self.flip_y,
            "points_dropped": self.points_dropped,
        }


def global_augment(
    cloud: PointCloud,
    config: AugmentConfig,
    rng: np.random.Generator,
    sensor: Optional[SensorModel] = None,
) -> tuple[PointCloud, Optional[GlobalRecord]]:
    """With probability p_global: quantized rotation, x/y flips (each 0.5),
    point drop. Otherwise the identity. Returns the record of what was done,
    or None when nothing was."""
    if rng.random() >= config.p_global:
        return cloud, None
    sensor = sensor if sensor is not None else SensorModel()
    placement = draw_placement(
        rng, config.global_rotation_limit, config.point_drop_rate, sensor
    )
    before = len(cloud)
    out = apply_placement(cloud, placement, sensor, rng)
    record = GlobalRecord(
        placement.rotation_steps,
        placement.flip_x,
        placement.flip_y,
        before - len(out),
    )
    return out, record


# ---------------------------------------------------------------------------
# Class distribution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassDistribution:
    """Point counts per semantic class over one cloud."""

    counts: Mapping[int, int]
    total: int

    def share(self, class_id: int) -> float:
        return self.counts.get(class_id, 0) / self.total

    def shares(self) -> dict[int, float]:
        return {c: n / self.total for c, n in self.counts.items()}


def compute_distribution(labels: np.ndarray) -> ClassDistribution:
    if labels is None or len(labels) == 0:
        raise ValueError("cannot compute a class distribution of an empty cloud")
    classes, counts = np.unique(kitti_io.semantic_classes(labels), return_counts=True)
    return ClassDistribution(
        counts={int(c): int(n) for c, n in zip(classes, counts)},
        total=int(len(labels)),
    )


# ---------------------------------------------------------------------------
# Occlusion-checked injection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InjectionRecord:
    accepted: bool
    semantic_class: int
    source: InstanceSource
    assigned_instance_id: int
    points_added: int
    target_points_removed: int
    rotation_steps: int = 0
    flip_x: bool = False
    flip_y: bool = False

    def to_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "semantic_class": self.semantic_class,
            "source": list(self.source),
            "assigned_instance_id": self.assigned_instance_id,
            "points_added": self.points_added,
            "target_points_removed": self.target_points_removed,
            "rotation_steps": self.rotation_steps,
            "flip_x": self.flip_x,
            "flip_y": self.flip_y,
        }


def _min_over_cells(cell_ids: np.ndarray, values: np.ndarray, size: int) -> np.ndarray:
    """Dense per-cell minimum, +inf where empty (descending-order scatter)."""
    grid = np.full(size, np.inf)
    if len(cell_ids):
        order = np.argsort(-values, kind="stable")
        grid[cell_ids[order]] = values[order]
    return grid


def inject_instance(
    target: PointCloud,
    instance: ObjectInstance,
    sensor: SensorModel,
    eps: float,
    *,
    instance_id: Optional[int] = None,
) -> tuple[PointCloud, InjectionRecord]:
    """Merge an already-placed instance into a scene, cell by cell.

    Per grid cell, against the target's existing entries:

    * an instance point is dropped when some target entry in its cell is
      closer than its own range by more than eps (the scene occludes it);
    * each surviving instance point removes every target entry in its cell
      farther than its own range plus eps (overlap and lidar shadow).

    Target points within eps of an instance point survive, and do not
    occlude it: ties favour the scene already in place. When every
    instance point is occluded the injection is rejected and the target
    is returned unchanged (accepted=False on the record; not an error).

    Surviving instance points are appended after the surviving target
    points, labeled with the instance's class and a fresh instance id
    (max existing id + 1 unless one is supplied).
    """
    if target.labels is None:
        raise ValueError("injection needs a labeled target cloud")
    if instance.point_count == 0:
        return target, InjectionRecord(
            False, instance.semantic_class, instance.source, 0, 0, 0
        )

    target_index = build_range_index(target.xyz, sensor, "target")
    min_target = target_index.min_range_grid()

    obj_cells = (
        instance.rows.astype(np.int64) * sensor.num_columns
        + instance.cols.astype(np.int64)
    )
    obj_ranges = np.linalg.norm(instance.points[:, :3].astype(np.float64), axis=1)
    kept_obj = min_target[obj_cells] >= obj_ranges - eps
    if not kept_obj.any():
        return target, InjectionRecord(
            False, instance.semantic_class, instance.source, 0, 0, 0
        )

    min_kept = _min_over_cells(
        obj_cells[kept_obj], obj_ranges[kept_obj], sensor.cell_count
    )
    shadowed = target_index.ranges > min_kept[target_index.cell_ids] + eps
    keep_target = np.ones(len(target), dtype=bool)
    keep_target[target_index.ordinals[shadowed]] = False

    if instance_id is None:
        instance_id = _next_instance_id(target.labels, 1)
    new_points = instance.points[kept_obj]
    new_labels = np.full(
        len(new_points),
        kitti_io.pack_label(instance.semantic_class, instance_id),
        dtype=np.uint32,
    )
    merged = PointCloud(
        np.concatenate([target.points[keep_target], new_points]),
        np.concatenate([target.labels[keep_target], new_labels]),
    )
    record = InjectionRecord(
        accepted=True,
        semantic_class=instance.semantic_class,
        source=instance.source,
        assigned_instance_id=instance_id,
        points_added=int(kept_obj.sum()),
        target_points_removed=int(shadowed.sum()),
    )
    return merged, record


def _next_instance_id(labels: np.ndarray, offset: int) -> int:
    top = int(kitti_io.instance_ids(labels).max()) if len(labels) else 0
    return (top + offset) & 0xFFFF


# ---------------------------------------------------------------------------
# Balancing injection loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InjectionSummary:
    attempts: int
    rejected: int
    stop_reason: str
    records: tuple[InjectionRecord, ...]

    @property
    def successes(self) -> int:
        return len(self.records)

    def to_dict(self) -> dict:
        return {
            "attempts": self.attempts,
            "rejected": self.rejected,
            "stop_reason": self.stop_reason,
            "injections": [r.to_dict() for r in self.records],
        }


def balance_inject(
    cloud: PointCloud,
    db: InstanceDatabase,
    config: AugmentConfig,
    rng: np.random.Generator,
    *,
    frame_ref: Optional[tuple[int, int]] = None,
    allow_self_injection: bool = True,
) -> tuple[PointCloud, InjectionSummary]:
    """Inject sampled instances until the rare classes catch up.

    Loop, recomputing the class distribution each round: draw a class
    uniformly from injection_classes; when its share already meets
    desired_share (or the database has nothing for it), redraw uniformly
    among the classes still below the threshold that the database can
    serve. The sampled instance receives a full-circle quantized rotation,
    random flips and point drop, then competes for visibility. Occluded
    (rejected) injections do not count toward max_injections but do count
    toward the attempt cap of max_attempts_factor * max_injections.

    Stops when no class is below the threshold ("balanced"), the database
    cannot serve any below-threshold class ("pool-exhausted"),
    max_injections landed ("max-injections"), or the attempt cap is hit
    ("attempt-cap").

    Instances sampled from the frame named by frame_ref are rejected when
    allow_self_injection is off.
    """
    if cloud.labels is None:
        raise ValueError("balancing injection needs a labeled cloud")
    classes = config.injection_classes
    cap = config.max_attempts_factor * config.max_injections
    next_id = _next_instance_id(cloud.labels, 1)

    attempts = 0
    rejected = 0
    records: list[InjectionRecord] = []
    while True:
        if len(records) >= config.max_injections:
            reason = "max-injections"
            break
        dist = compute_distribution(cloud.labels)
        below = [c for c in classes if dist.share(c) < config.desired_share]
        if not below:
            reason = "balanced"
            break
        available = [c for c in below if db.available(c) > 0]
        if not available:
            reason = "pool-exhausted"
            break
        if attempts >= cap:
            reason = "attempt-cap"
            break
        attempts += 1

        drawn = classes[int(rng.integers(len(classes)))]
        if drawn not in available:
            drawn = available[int(rng.integers(len(available)))]
        instance = sample_instance(db, drawn, rng)
        assert instance is not None  # available classes are non-empty
        if (
            not allow_self_injection
            and frame_ref is not None
            and (instance.source.sequence, instance.source.frame) == tuple(frame_ref)
        ):
            rejected += 1
            continue

        placement = draw_placement(rng, math.pi, config.point_drop_rate, db.sensor)
        placed = place_instance(instance, placement, db.sensor, rng)
        if placed.point_count == 0:
            rejected += 1
            continue
        merged, record = inject_instance(
            cloud, placed, db.sensor, config.range_epsilon, instance_id=next_id
        )
        record = replace(
            record,
            rotation_steps=placement.rotation_steps,
            flip_x=placement.flip_x,
            flip_y=placement.flip_y,
        )
        if record.accepted:
            cloud = merged
            records.append(record)
            next_id = (next_id + 1) & 0xFFFF
        else:
            rejected += 1

    return cloud, InjectionSummary(attempts, rejected, reason, tuple(records))


# ---------------------------------------------------------------------------
# Scene fusion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FusionRecord:
    rotation_steps: int
    flip_x: bool
    flip_y: bool
    partner_points_dropped: int
    cells_contested: int
    points_removed_first: int
    points_removed_partner: int
    partner_points_kept: int

    def to_dict(self) -> dict:
        return {
            "rotation_steps": self.rotation_steps,
            "flip_x": self.flip_x,
            "flip_y": self.flip_y,
            "partner_points_dropped": self.partner_points_dropped,
            "cells_contested": self.cells_contested,
            "points_removed_first": self.points_removed_first,
            "points_removed_partner": self.points_removed_partner,
            "partner_points_kept": self.partner_points_kept,
        }


def fuse_scenes(
    first: PointCloud,
    partner: PointCloud,
    sensor: SensorModel,
    config: AugmentConfig,
    rng: np.random.Generator,
    placement: Optional[Placement] = None,
) -> tuple[PointCloud, FusionRecord]:
    """Merge two scenes through whole-cell range competition.

    The partner first receives a quantized rotation within
    fusion_rotation_limit, independent x/y flips and point drop (drawn
    from rng unless a placement is forced). Then, per grid cell occupied
    by both clouds, the cloud owning the smaller minimum range keeps all
    its points in that cell and the other loses all of its; ties within
    range_epsilon go to the first cloud. Cells occupied by one cloud only
    are untouched, as are points outside the sensor's field of view.
    Output order: surviving first-cloud points, then surviving partner
    points, labels carried along.
    """
    if (first.labels is None) != (partner.labels is None):
        raise ValueError("cannot fuse a labeled cloud with an unlabeled one")
    if placement is None:
        placement = draw_placement(
            rng, config.fusion_rotation_limit, config.point_drop_rate, sensor
        )
    placed = apply_placement(partner, placement, sensor, rng)
    dropped = len(partner) - len(placed)

    index_a = build_range_index(first.xyz, sensor, "first")
    index_b = build_range_index(placed.xyz, sensor, "partner")
    min_a = index_a.min_range_grid()
    min_b = index_b.min_range_grid()

    partner_wins = min_b < min_a - config.range_epsilon
    contested = int(np.count_nonzero(np.isfinite(min_a) & np.isfinite(min_b)))

    keep_a = np.ones(len(first), dtype=bool)
    keep_a[index_a.ordinals[partner_wins[index_a.cell_ids]]] = False
    keep_b = np.ones(len(placed), dtype=bool)
    keep_b[index_b.ordinals[~partner_wins[index_b.cell_ids]]] = False
    keep_b[index_b.out_of_view] = True

    labels = None
    if first.labels is not None:
        labels = np.concatenate([first.labels[keep_a], placed.labels[keep_b]])
    fused = PointCloud(
        np.concatenate([first.points[keep_a], placed.points[keep_b]]), labels
    )
    record = FusionRecord(
        rotation_steps=placement.rotation_steps,
        flip_x=placement.flip_x,
        flip_y=placement.flip_y,
        partner_points_dropped=dropped,
        cells_contested=contested,
        points_removed_first=int((~keep_a).sum()),
        points_removed_partner=int((~keep_b).sum()),
        partner_points_kept=int(keep_b.sum()),
    )
    return fused, record


# ---------------------------------------------------------------------------
# Frame pipeline
# ---------------------------------------------------------------------------

class ScenePool(Protocol):
    """Source of fusion partner frames."""

    def __len__(self) -> int: ...

    def load(self, index: int) -> PointCloud: ...

    def describe(self, index: int) -> str: ...


@dataclass(frozen=True)
class InMemoryScenePool:
    """Scene pool over clouds already in memory (tests, array pipelines)."""

    clouds: Sequence[PointCloud]
    names: Optional[Sequence[str]] = None

    def __len__(self) -> int:
        return len(self.clouds)

    def load(self, index: int) -> PointCloud:
        return self.clouds[index]

    def describe(self, index: int) -> str:
        if self.names is not None:
            return self.names[index]
        return f"pool[{index}]"


@dataclass(frozen=True)
class AugmentReport:
    """Everything one frame's augmentation decided and changed."""

    input_points: int
    output_points: int
    global_applied: bool
    global_record: Optional[GlobalRecord]
    fusion_applied: bool
    fusion_partner: Optional[str]
    fusion_record: Optional[FusionRecord]
    fusion_error: Optional[str]
    injection_applied: bool
    injection_summary: Optional[InjectionSummary]

    def to_dict(self) -> dict:
        return {
            "input_points": self.input_points,
            "output_points": self.output_points,
            "global_applied": self.global_applied,
            "global": None if self.global_record is None else self.global_record.to_dict(),
            "fusion_applied": self.fusion_applied,
            "fusion_partner": self.fusion_partner,
            "fusion": None if self.fusion_record is None else self.fusion_record.to_dict(),
            "fusion_error": self.fusion_error,
            "injection_applied": self.injection_applied,
            "injection": None
            if self.injection_summary is None
            else self.injection_summary.to_dict(),
        }


def augment_frame(
    cloud: PointCloud,
    db: Optional[InstanceDatabase],
    scene_pool: ScenePool,
    config: AugmentConfig,
    rng: np.random.Generator,
    sensor: Optional[SensorModel] = None,
) -> tuple[PointCloud, AugmentReport]:
    """Run the full per-frame pipeline: global, fusion, then injection.

    Fusion runs before injection so injected objects also compete against
    partner-scene geometry. Draw order is fixed: the global gate and its
    placement, the fusion gate, partner index and placement, then the
    injection gate and balancing loop. A partner frame that fails to load
    skips fusion and is recorded on the report rather than raising.
    """
    if sensor is None:
        sensor = db.sensor if db is not None else SensorModel()
    input_points = len(cloud)

    cloud, global_record = global_augment(cloud, config, rng, sensor)

    fusion_applied = False
    fusion_partner = None
    fusion_record = None
    fusion_error = None
    if rng.random() < config.p_fusion:
        if len(scene_pool) == 0:
            fusion_error = "scene pool is empty"
        else:
            partner_index = int(rng.integers(len(scene_pool)))
            fusion_partner = scene_pool.describe(partner_index)
            try:
                partner = scene_pool.load(partner_index)
            except Exception as exc:  # noqa: BLE001 - partner I/O must not kill the frame
                fusion_error = f"partner load failed: {exc}"
            else:
                cloud, fusion_record = fuse_scenes(
                    cloud, partner, sensor, config, rng
                )
                fusion_applied = True

    injection_applied = False
    injection_summary = None
    if rng.random() < config.p_inject:
        if db is None:
            raise ValueError("p_inject > 0 requires an instance database")
        cloud, injection_summary = balance_inject(cloud, db, config, rng)
        injection_applied = True

    report = AugmentReport(
        input_points=input_points,
        output_points=len(cloud),
        global_applied=global_record is not None,
        global_record=global_record,
        fusion_applied=fusion_applied,
        fusion_partner=fusion_partner,
        fusion_record=fusion_record,
        fusion_error=fusion_error,
        injection_applied=injection_applied,
        injection_summary=injection_summary,
    )
    return cloud, report
