#!/usr/bin/env python3
"""Compare pipeline behavior across ablated configurations.

Runs the same synthetic frames through four settings (off, fusion only,
injection only, everything) and prints what each one did to the data:
output sizes, how often each stage fired, and how far the rare-class
share moved. No training involved, this is a data-level ablation.

    python3 scripts/ablation_behavior.py --frames 200 --seed 3
"""

import argparse

import numpy as np

from lidar_forge import (
    AugmentConfig,
    InMemoryScenePool,
    augment_frame,
    compute_distribution,
    frame_generator,
)
from lidar_forge.instances import (
    DB_FORMAT_VERSION,
    DatabaseManifest,
    InstanceDatabase,
    InstanceSource,
    ObjectInstance,
)
from lidar_forge.sensor import SensorModel, project_cloud
from lidar_forge.synth import make_scene

RARE = (11, 15, 18, 20, 30, 31, 32)


def toy_database(rng, sensor, per_class=3):
    """In-memory instance pool: Gaussian blobs for every rare class."""
    instances = {}
    for class_id in RARE:
        pool = []
        for j in range(per_class):
            d = rng.uniform(8.0, 35.0)
            az = rng.uniform(-np.pi, np.pi)
            center = np.array([d * np.cos(az), d * np.sin(az), rng.uniform(-1.0, -0.4)])
            xyz = center + rng.normal(0.0, 0.4, (int(rng.integers(40, 160)), 3))
            points = np.empty((len(xyz), 4), dtype=np.float32)
            points[:, :3] = xyz.astype(np.float32)
            points[:, 3] = rng.random(len(xyz)).astype(np.float32)
            proj = project_cloud(points[:, :3].astype(np.float64), sensor)
            keep = proj.in_view
            if keep.sum() < 20:
                continue
            pool.append(
                ObjectInstance(
                    semantic_class=class_id,
                    points=np.ascontiguousarray(points[keep]),
                    rows=proj.rows[keep].astype(np.uint16),
                    cols=proj.cols[keep].astype(np.uint16),
                    source=InstanceSource(0, j, j + 1),
                )
            )
        instances[class_id] = tuple(pool)
    manifest = DatabaseManifest(
        version=DB_FORMAT_VERSION,
        fingerprint=bytes(32),
        class_counts={c: len(v) for c, v in instances.items()},
    )
    return InstanceDatabase(sensor=sensor, instances=instances, manifest=manifest)


CONFIGS = {
    "off": dict(p_global=0.0, p_fusion=0.0, p_inject=0.0),
    "fusion": dict(p_global=0.0, p_fusion=1.0, p_inject=0.0),
    "inject": dict(p_global=0.0, p_fusion=0.0, p_inject=1.0),
    "full": dict(p_global=0.5, p_fusion=0.3, p_inject=0.5),
}


def rare_share(labels) -> float:
    dist = compute_distribution(labels)
    return sum(dist.share(c) for c in RARE)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--frames", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--points", type=int, default=2500, help="background points per frame")
    args = ap.parse_args()

    sensor = SensorModel()
    rng = np.random.default_rng(args.seed)
    db = toy_database(rng, sensor)
    scenes = [make_scene(rng, sensor, args.points) for _ in range(20)]
    pool = InMemoryScenePool(scenes)

    print(f"{args.frames} frames, {args.points} background points, seed {args.seed}")
    header = (
        f"{'config':<8} {'out_pts':>9} {'fused%':>7} {'injected%':>10} "
        f"{'inj/frame':>10} {'rare%':>7}"
    )
    print(header)
    print("-" * len(header))
    for name, overrides in CONFIGS.items():
        config = AugmentConfig(**overrides)
        sizes, fused, injected, successes, share = [], 0, 0, 0, []
        for i in range(args.frames):
            scene = scenes[i % len(scenes)]
            gen = frame_generator(args.seed, i)
            out, report = augment_frame(scene, db, pool, config, gen, sensor)
            sizes.append(len(out))
            fused += report.fusion_applied
            injected += report.injection_applied
            if report.injection_summary is not None:
                successes += report.injection_summary.successes
            share.append(rare_share(out.labels))
        print(
            f"{name:<8} {np.mean(sizes):>9.0f} {100 * fused / args.frames:>6.1f}% "
            f"{100 * injected / args.frames:>9.1f}% {successes / args.frames:>10.2f} "
            f"{100 * np.mean(share):>6.2f}%"
        )


if __name__ == "__main__":
    main()
