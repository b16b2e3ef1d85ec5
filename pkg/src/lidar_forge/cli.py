"""Command line interface: build-db, augment, stats, render.

Exit codes: 0 on success, 1 when some frames failed but the run finished,
2 for an invalid invocation. All randomness flows from --seed (or the
config's seed field); outputs are bit-identical across runs and worker
counts because every frame derives its own generator from
(seed, sequence, frame).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import multiprocessing
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import instances as instdb
from . import kitti_io, render
from .augment import AugmentConfig, augment_frame, frame_generator, make_frame_key
from .kitti_io import PointCloud
from .semantic_kitti import class_name
from .sensor import SensorModel

__all__ = ["main", "JobSpec", "CliError", "select_frames", "DatasetScenePool"]

DB_FILENAME = "instances.db"
REPORT_FILENAME = "report.jsonl"
STATS_FILENAME = "class_stats.csv"


class CliError(Exception):
    """Invocation or environment problem; carries the process exit code."""

    def __init__(self, message: str, code: int = 2):
        super().__init__(message)
        self.code = code


class FrameAddress(NamedTuple):
    """One frame on disk: sequence/frame ids plus file paths."""

    sequence: str
    frame: str
    scan_path: Path
    label_path: Optional[Path]

    @property
    def key(self) -> tuple[int, int]:
        return int(self.sequence), int(self.frame)


@dataclass(frozen=True)
class JobSpec:
    """Parsed, validated invocation of one subcommand."""

    command: str
    data_root: Path
    out_root: Optional[Path]
    config_path: Optional[Path]
    seed: Optional[int]
    sequences: Optional[tuple[str, ...]]
    frame_range: Optional[tuple[int, int]]
    stride: int = 1
    workers: int = 1
    db_path: Optional[Path] = None
    min_points: int = instdb.DEFAULT_MIN_POINTS

    def __post_init__(self) -> None:
        if self.stride < 1:
            raise CliError(f"--stride must be >= 1, got {self.stride}")
        if self.workers < 1:
            raise CliError(f"--workers must be >= 1, got {self.workers}")
        if self.out_root is not None and self.out_root.resolve() == self.data_root.resolve():
            raise CliError("--out must differ from --data")


# ---------------------------------------------------------------------------
# Frame selection
# ---------------------------------------------------------------------------

def select_frames(
    data_root: Path,
    sequences: Optional[Sequence[str]],
    frame_range: Optional[tuple[int, int]],
    stride: int,
    *,
    need_labels: bool,
) -> list[FrameAddress]:
    """Enumerate the selected frames in deterministic (sequence, frame) order.

    The range filter keeps frame ids in [start, end); the stride then keeps
    every stride-th of the remaining frames, per sequence, starting at the
    first.
    """
    seq_root = data_root / "sequences"
    if not seq_root.is_dir():
        raise CliError(f"{data_root} has no sequences/ directory")
    if sequences is None:
        seq_ids = sorted(p.name for p in seq_root.iterdir() if p.is_dir())
    else:
        seq_ids = list(sequences)
    if not seq_ids:
        raise CliError(f"{seq_root} holds no sequences")

    out: list[FrameAddress] = []
    for seq in seq_ids:
        velodyne = seq_root / seq / "velodyne"
        if not velodyne.is_dir():
            raise CliError(f"sequence {seq}: missing {velodyne}")
        labels_dir = seq_root / seq / "labels"
        if need_labels and not labels_dir.is_dir():
            raise CliError(f"sequence {seq}: missing labels directory {labels_dir}")
        scans = sorted(velodyne.glob("*.bin"), key=lambda p: int(p.stem))
        if frame_range is not None:
            lo, hi = frame_range
            scans = [p for p in scans if lo <= int(p.stem) < hi]
        scans = scans[::stride]
        for scan in scans:
            label = labels_dir / f"{scan.stem}.label"
            out.append(
                FrameAddress(
                    seq,
                    scan.stem,
                    scan,
                    label if label.exists() else None,
                )
            )
    return out


class DatasetScenePool:
    """Fusion partners drawn from the frames selected for this run."""

    def __init__(self, frames: Sequence[FrameAddress]):
        self.frames = list(frames)

    def __len__(self) -> int:
        return len(self.frames)

    def load(self, index: int) -> PointCloud:
        ref = self.frames[index]
        if ref.label_path is None:
            raise FileNotFoundError(f"frame {ref.sequence}/{ref.frame} has no labels")
        return kitti_io.read_frame(ref.scan_path, ref.label_path)

    def describe(self, index: int) -> str:
        ref = self.frames[index]
        return f"{ref.sequence}/{ref.frame}"


# ---------------------------------------------------------------------------
# augment
# ---------------------------------------------------------------------------

_WORKER_CTX: dict = {}


def _augment_worker_init(config_dict, seed, db_path, frame_list, out_root) -> None:
    _WORKER_CTX["config"] = AugmentConfig.from_dict(config_dict)
    _WORKER_CTX["seed"] = seed
    _WORKER_CTX["db"] = instdb.load_database(db_path) if db_path else None
    _WORKER_CTX["pool"] = DatasetScenePool(frame_list)
    _WORKER_CTX["out_root"] = out_root


def _augment_one(index: int) -> tuple[int, dict]:
    config: AugmentConfig = _WORKER_CTX["config"]
    pool: DatasetScenePool = _WORKER_CTX["pool"]
    ref: FrameAddress = pool.frames[index]
    out_root: Path = _WORKER_CTX["out_root"]
    base = {"sequence": ref.sequence, "frame": ref.frame}
    try:
        if ref.label_path is None:
            raise FileNotFoundError(f"no label file for frame {ref.sequence}/{ref.frame}")
        cloud = kitti_io.read_frame(ref.scan_path, ref.label_path)
        rng = frame_generator(_WORKER_CTX["seed"], make_frame_key(*ref.key))
        augmented, report = augment_frame(
            cloud, _WORKER_CTX["db"], pool, config, rng
        )
        seq_dir = out_root / "sequences" / ref.sequence
        kitti_io.write_frame(
            augmented,
            seq_dir / "velodyne" / f"{ref.frame}.bin",
            seq_dir / "labels" / f"{ref.frame}.label",
        )
    except Exception as exc:  # noqa: BLE001 - one bad frame must not kill the run
        return index, {**base, "status": "error", "error": str(exc)}
    return index, {**base, "status": "ok", **report.to_dict()}


def cmd_augment(job: JobSpec) -> int:
    if job.out_root is None:
        raise CliError("augment requires --out")
    config = AugmentConfig.from_file(job.config_path) if job.config_path else AugmentConfig()
    seed = job.seed if job.seed is not None else config.seed

    frames = select_frames(
        job.data_root, job.sequences, job.frame_range, job.stride, need_labels=True
    )
    if not frames:
        raise CliError("selection matched no frames")

    db_path: Optional[Path] = None
    if config.p_inject > 0:
        db_path = job.db_path if job.db_path is not None else job.data_root / DB_FILENAME
        if not db_path.is_file():
            raise CliError(
                f"p_inject={config.p_inject} needs an instance database; "
                f"{db_path} does not exist (build one with build-db or pass --db)"
            )

    init_args = (config.to_dict(), seed, db_path, frames, job.out_root)
    results: list[tuple[int, dict]] = []
    if job.workers == 1:
        _augment_worker_init(*init_args)
        for i in range(len(frames)):
            results.append(_augment_one(i))
    else:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(
            job.workers, initializer=_augment_worker_init, initargs=init_args
        ) as pool:
            results = list(pool.imap_unordered(_augment_one, range(len(frames)), chunksize=4))

    results.sort(key=lambda r: r[0])
    records = [rec for _, rec in results]
    report_path = job.out_root / REPORT_FILENAME
    payload = "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in records)
    kitti_io._atomic_write(report_path, payload.encode())

    failures = sum(1 for rec in records if rec["status"] != "ok")
    print(
        f"augmented {len(records) - failures}/{len(records)} frames "
        f"-> {job.out_root} (report: {report_path})"
    )
    if failures:
        print(f"{failures} frame(s) failed; see {report_path}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# build-db
# ---------------------------------------------------------------------------

def cmd_build_db(job: JobSpec) -> int:
    if job.out_root is None and job.db_path is None:
        raise CliError("build-db requires --out (or an explicit --db path)")
    config = AugmentConfig.from_file(job.config_path) if job.config_path else AugmentConfig()
    frames = select_frames(
        job.data_root, job.sequences, job.frame_range, job.stride, need_labels=True
    )
    if not frames:
        raise CliError("selection matched no frames")
    refs = [
        instdb.FrameRef(int(f.sequence), int(f.frame), f.scan_path, f.label_path)
        for f in frames
        if f.label_path is not None
    ]
    missing = len(frames) - len(refs)
    sensor = SensorModel()
    db = instdb.build_database(
        refs, sensor, config.injection_classes, job.min_points
    )
    db_path = job.db_path if job.db_path is not None else job.out_root / DB_FILENAME
    instdb.save_database(db, db_path)

    print(f"scanned {len(refs)} frames -> {db_path}")
    for class_id in db.classes:
        print(f"  {class_id:3d} {class_name(class_id)}: {db.count(class_id)}")
    errors = len(db.manifest.errors) + missing
    if errors:
        print(f"{errors} frame(s) skipped with errors", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# stats
# ---------------------------------------------------------------------------

def cmd_stats(job: JobSpec) -> int:
    frames = select_frames(
        job.data_root, job.sequences, job.frame_range, job.stride, need_labels=True
    )
    if not frames:
        raise CliError("selection matched no frames")
    totals: dict[int, int] = {}
    frames_with: dict[int, int] = {}
    grand_total = 0
    for ref in frames:
        if ref.label_path is None:
            raise CliError(f"frame {ref.sequence}/{ref.frame} has no labels", code=1)
        labels = kitti_io.read_labels(ref.label_path)
        grand_total += len(labels)
        classes, counts = np.unique(
            kitti_io.semantic_classes(labels), return_counts=True
        )
        for c, n in zip(classes, counts):
            totals[int(c)] = totals.get(int(c), 0) + int(n)
            frames_with[int(c)] = frames_with.get(int(c), 0) + 1

    rows = [
        (c, class_name(c), totals[c], totals[c] / grand_total, frames_with[c])
        for c in sorted(totals)
    ]
    header = f"{'class':>5}  {'name':<18} {'points':>12} {'share':>9} {'frames':>7}"
    print(header)
    print("-" * len(header))
    for c, name, pts, share, nf in rows:
        print(f"{c:>5}  {name:<18} {pts:>12} {share:>9.4%} {nf:>7}")
    print(f"total points: {grand_total} over {len(frames)} frames")

    if job.out_root is not None:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["class_id", "name", "points", "share", "frames"])
        for c, name, pts, share, nf in rows:
            writer.writerow([c, name, pts, f"{share:.6f}", nf])
        kitti_io._atomic_write(job.out_root / STATS_FILENAME, buf.getvalue().encode())
        print(f"wrote {job.out_root / STATS_FILENAME}")
    return 0


# ---------------------------------------------------------------------------
# render
# ---------------------------------------------------------------------------

def cmd_render(job: JobSpec) -> int:
    if job.out_root is None:
        raise CliError("render requires --out")
    frames = select_frames(
        job.data_root, job.sequences, job.frame_range, job.stride, need_labels=False
    )
    if not frames:
        raise CliError("selection matched no frames")
    sensor = SensorModel()
    out_dir = job.out_root / "render"
    for ref in frames:
        if ref.label_path is not None:
            cloud = kitti_io.read_frame(ref.scan_path, ref.label_path)
        else:
            cloud = kitti_io.read_points(ref.scan_path)
        stem = f"{ref.sequence}_{ref.frame}"
        render.save_png(render.range_image_array(cloud, sensor), out_dir / f"{stem}_range.png")
        if cloud.labels is not None:
            render.save_png(
                render.class_image_array(cloud, sensor), out_dir / f"{stem}_classes.png"
            )
    print(f"rendered {len(frames)} frame(s) -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _parse_frame_range(text: str) -> tuple[int, int]:
    try:
        lo, _, hi = text.partition(":")
        return int(lo), int(hi)
    except ValueError:
        raise CliError(f"--frames must look like START:END, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lidar-forge",
        description="Structure-preserving lidar point cloud augmentation toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("build-db", "extract an injectable-instance database from labeled frames"),
        ("augment", "augment selected frames into an output dataset"),
        ("stats", "per-class point counts and shares over a frame selection"),
        ("render", "write range/class images of selected frames"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--data", required=True, type=Path, help="dataset root")
        p.add_argument("--out", type=Path, help="output root")
        p.add_argument("--config", type=Path, help="JSON augmentation config")
        p.add_argument("--seed", type=int, help="master seed (overrides config seed)")
        p.add_argument(
            "--sequences", help="comma-separated sequence ids (default: all)"
        )
        p.add_argument("--frames", help="frame id range START:END (end exclusive)")
        p.add_argument("--stride", type=int, default=1, help="keep every n-th frame")
        p.add_argument("--workers", type=int, default=1, help="parallel workers")
        p.add_argument("--db", type=Path, help="instance database path")
        if name == "build-db":
            p.add_argument(
                "--min-points",
                type=int,
                default=instdb.DEFAULT_MIN_POINTS,
                help="minimum visible points per stored instance",
            )
    return parser


def job_from_args(args: argparse.Namespace) -> JobSpec:
    sequences = None
    if args.sequences:
        sequences = tuple(s.strip() for s in args.sequences.split(",") if s.strip())
    return JobSpec(
        command=args.command,
        data_root=args.data,
        out_root=args.out,
        config_path=args.config,
        seed=args.seed,
        sequences=sequences,
        frame_range=_parse_frame_range(args.frames) if args.frames else None,
        stride=args.stride,
        workers=args.workers,
        db_path=args.db,
        min_points=getattr(args, "min_points", instdb.DEFAULT_MIN_POINTS),
    )


COMMANDS = {
    "build-db": cmd_build_db,
    "augment": cmd_augment,
    "stats": cmd_stats,
    "render": cmd_render,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        job = job_from_args(args)
        return COMMANDS[job.command](job)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
