"""In-process pipeline access for ML dataloaders.

Open the pipeline once per worker process, then feed frames through as
plain numpy arrays:

    handle = open_pipeline("instances.db", "aug.json", "/data/kitti", seed=7)
    points2, labels2, report = augment_arrays(handle, points, labels, frame_key)

A handle is immutable and safe for concurrent read-only use; dataloader
workers should each open their own. `frame_key` identifies the frame
(the primary package's `make_frame_key(sequence, frame)` builds one from
dataset ids); every frame's generator derives from (seed, frame_key), so
shuffling order and epoch count cannot change what a given frame gets.
Outputs are bitwise identical to `lidar-forge augment` over the same
frames, seed and config, provided the CLI run selects exactly the frames
under `scene_root` (both sides then draw fusion partners from the same
pool, in the same order).

All validation work happens at open time: the database is loaded and
version-checked, the config parsed, the scene pool enumerated. Per-frame
calls only check array shapes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from lidar_forge import (
    AugmentConfig,
    InstanceDatabase,
    PointCloud,
    augment_frame,
    frame_generator,
    load_database,
)
from lidar_forge.cli import DatasetScenePool, select_frames

__all__ = ["BindingError", "PipelineHandle", "open_pipeline", "augment_arrays"]

PathLike = Union[str, Path]


class BindingError(ValueError):
    """Invalid open_pipeline/augment_arrays invocation."""


@dataclass(frozen=True)
class PipelineHandle:
    """Everything one pipeline needs, resolved once: the loaded instance
    database (None when injection is off), the config, the fusion partner
    pool, and the base seed."""

    config: AugmentConfig
    db: Optional[InstanceDatabase]
    pool: DatasetScenePool
    seed: int


def open_pipeline(
    db_path: Optional[PathLike],
    config_path: Optional[PathLike],
    scene_root: PathLike,
    seed: Optional[int] = None,
) -> PipelineHandle:
    """Resolve and validate a pipeline; errors surface here, not per frame.

    `config_path` None means defaults. `seed` None takes the config's
    seed. The database is only required (and only loaded) when the config
    enables injection, mirroring the CLI.
    """
    config = AugmentConfig.from_file(config_path) if config_path is not None else AugmentConfig()
    base_seed = config.seed if seed is None else int(seed)

    db = None
    if config.p_inject > 0:
        if db_path is None or not Path(db_path).is_file():
            raise BindingError(
                f"p_inject={config.p_inject} needs an instance database; "
                f"{db_path} does not exist"
            )
        db = load_database(db_path)

    frames = select_frames(Path(scene_root), None, None, 1, need_labels=True)
    if not frames:
        raise BindingError(f"{scene_root} holds no labeled frames for the scene pool")
    return PipelineHandle(config=config, db=db, pool=DatasetScenePool(frames), seed=base_seed)


def augment_arrays(
    handle: PipelineHandle,
    points: np.ndarray,
    labels: np.ndarray,
    frame_key: int,
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Augment one frame given as raw arrays.

    `points` is (N, 4) float32 xyzi (other float dtypes are converted),
    `labels` (N,) uint32 packed label words. Returns the augmented
    arrays plus the decision report as a plain dict. Arrays already in
    the native dtype and layout pass through without copying.
    """
    points = np.asarray(points)
    labels = np.asarray(labels)
    if points.ndim != 2 or points.shape[1] != 4:
        raise BindingError(f"points must be (N, 4), got {points.shape}")
    if labels.shape != (points.shape[0],):
        raise BindingError(
            f"labels must be ({points.shape[0]},) to match points, got {labels.shape}"
        )
    cloud = PointCloud(
        np.ascontiguousarray(points, dtype=np.float32),
        np.ascontiguousarray(labels, dtype=np.uint32),
    )
    rng = frame_generator(handle.seed, int(frame_key))
    out, report = augment_frame(cloud, handle.db, handle.pool, handle.config, rng)
    return out.points, out.labels, report.to_dict()
