#!/usr/bin/env python3
"""Write a small synthetic dataset in SemanticKITTI layout.

Handy for smoke tests and demos when no real sequences are around:

    python3 scripts/make_fixtures.py --out /tmp/toy --sequences 00,01 --frames 20
"""

import argparse
from pathlib import Path

from lidar_forge.synth import write_fixture_dataset


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, required=True, help="dataset root to create")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--sequences", default="00", help="comma-separated sequence ids")
    ap.add_argument("--frames", type=int, default=12, help="frames per sequence")
    ap.add_argument("--points", type=int, default=3000, help="background points per frame")
    ap.add_argument("--no-calib", action="store_true", help="skip poses.txt/calib.txt")
    args = ap.parse_args()

    sequences = tuple(s.strip() for s in args.sequences.split(",") if s.strip())
    write_fixture_dataset(
        args.out,
        seed=args.seed,
        sequences=sequences,
        frames_per_sequence=args.frames,
        n_background=args.points,
        with_calib=not args.no_calib,
    )
    total = args.frames * len(sequences)
    print(f"wrote {total} frames across {len(sequences)} sequence(s) under {args.out}")


if __name__ == "__main__":
    main()
