#!/usr/bin/env python3
"""Strip the ego-motion compensation from a sequence's scans.

Odometry-style scans are usually motion compensated: every point is
expressed in the pose at sweep end. Cut-and-paste augmentation mixes
geometry across frames, so working on the raw sensor-centric geometry is
cleaner. This walks one sequence, estimates each sweep's ego displacement
from consecutive poses (conjugated through calib.txt when present) and
writes scans with the compensation reversed.

    python3 scripts/undo_ego_motion.py --data /data/kitti --sequence 08 --out /data/kitti_raw
"""

import argparse
import shutil
import sys
from pathlib import Path

from lidar_forge import kitti_io
from lidar_forge.kitti_io import Pose
from lidar_forge.sensor import SensorModel


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", type=Path, required=True, help="dataset root")
    ap.add_argument("--sequence", required=True, help="sequence id, e.g. 08")
    ap.add_argument("--out", type=Path, required=True, help="output dataset root")
    args = ap.parse_args()

    seq_dir = args.data / "sequences" / args.sequence
    out_dir = args.out / "sequences" / args.sequence
    scans = sorted((seq_dir / "velodyne").glob("*.bin"), key=lambda p: int(p.stem))
    if not scans:
        print(f"no scans under {seq_dir}", file=sys.stderr)
        return 2

    poses_path = seq_dir / "poses.txt"
    if not poses_path.is_file():
        # Nothing to undo without odometry; keep the scans as they are so
        # downstream tooling still finds a complete sequence.
        print(f"{poses_path} missing, copying scans unchanged", file=sys.stderr)
        for scan in scans:
            dst = out_dir / "velodyne" / scan.name
            dst.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(scan, dst)
        return 0

    poses = kitti_io.read_poses(poses_path)
    if len(poses) < len(scans):
        print(
            f"{len(scans)} scans but only {len(poses)} poses; refusing to guess",
            file=sys.stderr,
        )
        return 2
    calib = None
    calib_path = seq_dir / "calib.txt"
    if calib_path.is_file():
        calib = kitti_io.read_calib_velo_to_cam(calib_path)

    sensor = SensorModel()
    identity = Pose.identity()
    for i, scan in enumerate(scans):
        # The sweep's displacement comes from the next pose gap; the last
        # frame reuses the previous gap (constant-velocity guess).
        j = i if i + 1 < len(poses) else i - 1
        delta = kitti_io.relative_pose(poses[j], poses[j + 1], calib)
        cloud = kitti_io.read_points(scan)
        undone = kitti_io.undo_ego_motion(cloud, identity, delta, sensor)
        kitti_io.write_points(undone, out_dir / "velodyne" / scan.name)
        label = seq_dir / "labels" / f"{scan.stem}.label"
        if label.is_file():
            dst = out_dir / "labels" / label.name
            dst.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(label, dst)

    print(f"rewrote {len(scans)} scans -> {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
