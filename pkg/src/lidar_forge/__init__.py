"""Structure-preserving lidar point cloud augmentation.

Objects are injected and whole scenes fused on the sensor's range-image
grid, with per-cell range competition deciding visibility, so augmented
clouds keep the scan structure a real sensor would have produced. Includes
SemanticKITTI-format dataset tooling and a deterministic, seedable CLI.
"""

from .augment import (
    AugmentConfig,
    AugmentReport,
    ClassDistribution,
    ConfigError,
    InMemoryScenePool,
    Placement,
    augment_frame,
    balance_inject,
    compute_distribution,
    flip,
    frame_generator,
    fuse_scenes,
    global_augment,
    inject_instance,
    make_frame_key,
    point_drop,
    quantized_rotation,
)
from .instances import (
    InstanceDatabase,
    ObjectInstance,
    build_database,
    extract_instances,
    load_database,
    sample_instance,
    save_database,
)
from .kitti_io import (
    PointCloud,
    Pose,
    read_frame,
    read_labels,
    read_points,
    read_poses,
    undo_ego_motion,
    write_frame,
    write_labels,
    write_points,
)
from .sensor import (
    CellIndex,
    RangeImage,
    SensorModel,
    SphericalPoint,
    build_range_index,
    project,
    to_spherical,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "AugmentReport",
    "ClassDistribution",
    "ConfigError",
    "InMemoryScenePool",
    "Placement",
    "augment_frame",
    "balance_inject",
    "compute_distribution",
    "flip",
    "frame_generator",
    "fuse_scenes",
    "global_augment",
    "inject_instance",
    "make_frame_key",
    "point_drop",
    "quantized_rotation",
    "InstanceDatabase",
    "ObjectInstance",
    "build_database",
    "extract_instances",
    "load_database",
    "sample_instance",
    "save_database",
    "PointCloud",
    "Pose",
    "read_frame",
    "read_labels",
    "read_points",
    "read_poses",
    "undo_ego_motion",
    "write_frame",
    "write_labels",
    "write_points",
    "CellIndex",
    "RangeImage",
    "SensorModel",
    "SphericalPoint",
    "build_range_index",
    "project",
    "to_spherical",
    "__version__",
]
