"""Command-line front end: synth | aggregate | augment | lift | distill | bench.

Exit codes: 0 success, 1 usage error, 2 data or configuration error. Every
subcommand that draws randomness takes --seed, and all outputs are
reproducible for a given seed (bench timing columns aside).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import aggregation, bench
from .aggregation import AggregatedCloud, aggregate_direct, aggregate_fsa, aggregate_stepped
from .augment import apply_switch, classify_motion, extract_track, moving_to_static, ring_anchors, static_to_moving
from .distill import distill_loss
from .errors import (
    ConfigurationError,
    FormatError,
    InvalidInputError,
    InvalidSpecError,
    NotAugmentableError,
    UsageError,
)
from .geometry import LabeledCloud, PointCloud, relative_pose
from .imaging import (
    aggregate_image_features,
    fuse_to_voxels,
    read_image,
    synthetic_feature_image,
    write_image,
)
from .sequence import (
    SequenceFrame,
    corrupt_labels,
    generate_synthetic,
    load_camera_calib,
    load_scene_spec,
    load_sequence,
    write_sequence,
)
from .voxels import load_voxel_maps, save_voxel_maps

DATA_ERRORS = (
    FormatError,
    InvalidInputError,
    InvalidSpecError,
    ConfigurationError,
    NotAugmentableError,
    FileNotFoundError,
    IsADirectoryError,
    NotADirectoryError,
    OSError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); keep codes ours
        raise UsageError(message)


def _add_source(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--sequence", metavar="DIR", help="SemanticKITTI-format sequence directory")
    group.add_argument("--synth", metavar="SPEC", help="synthetic scene spec (YAML)")


def _resolve_division(spec: str, window: int | None = None):
    # a bad --division is an argument problem, not a data problem
    try:
        return aggregation.resolve_division(spec, window)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None


def _load_source(args) -> tuple[list[SequenceFrame], object]:
    """Frames plus a camera calibration (None when unavailable)."""
    if args.sequence:
        seq_dir = Path(args.sequence)
        frames = load_sequence(seq_dir)
        try:
            calib = load_camera_calib(seq_dir)
        except (FormatError, InvalidInputError):
            calib = None
        return frames, calib
    spec = load_scene_spec(args.synth)
    if getattr(args, "seed", None) is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    return generate_synthetic(spec), spec.camera.calib()


def _pick_frame(frames, requested: int | None) -> int:
    if requested is None:
        return frames[-1].index
    if requested not in {f.index for f in frames}:
        raise InvalidInputError(f"frame {requested} is not in the loaded range")
    return requested


def _corrupted_past(frames, t: int, rate: float, seed: int):
    """Simulated historical predictions: resample past labels, keep t as-is."""
    if rate == 0.0:
        return frames
    return [
        frame if frame.index == t else corrupt_labels(frame, rate, seed + frame.index)
        for frame in frames
    ]


def _aggregate(args, frames) -> AggregatedCloud:
    t = _pick_frame(frames, args.frame)
    frames = _corrupted_past(frames, t, args.label_error_rate, args.seed or 0)
    if args.strategy == "direct":
        return aggregate_direct(frames, t, args.window)
    if args.strategy == "stepped":
        return aggregate_stepped(frames, t, args.window, args.step)
    division = _resolve_division(args.division, args.window)
    return aggregate_fsa(frames, t, division)


def _save_cloud(path, agg: AggregatedCloud) -> None:
    np.savez(
        path,
        xyz=agg.labeled.cloud.xyz,
        intensity=agg.labeled.cloud.intensity,
        semantic=agg.labeled.semantic,
        instance=agg.labeled.instance,
        source_frame=agg.source_frame,
        source_step=agg.source_step,
        reference_frame=np.int64(agg.reference_frame),
    )


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(args) -> int:
    spec = load_scene_spec(args.spec)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    frames = generate_synthetic(spec)
    out = Path(args.out)
    calib = spec.camera.calib()
    write_sequence(out, frames, calib)
    image_dir = out / "image_2"
    image_dir.mkdir(exist_ok=True)
    for frame in frames:
        image = synthetic_feature_image(calib, frame.index, channels=3, seed=spec.seed)
        write_image(image_dir / f"{frame.index:06d}.ppm", image)
    total = sum(f.count for f in frames)
    print(f"wrote {len(frames)} frames ({total} points) to {out}")
    return 0


def _cmd_aggregate(args) -> int:
    frames, _ = _load_source(args)
    agg = _aggregate(args, frames)
    if args.out:
        _save_cloud(args.out, agg)
    past = int((agg.source_step > 0).sum())
    print(
        f"{args.strategy}: {agg.count} points at t={agg.reference_frame} "
        f"(window {args.window}, {past} temporal)"
    )
    return 0


def _cmd_augment(args) -> int:
    frames, calib = _load_source(args)
    t = _pick_frame(frames, args.frame)
    first = min(f.index for f in frames)
    agg = aggregate_direct(frames, t, t - first)
    track = extract_track(agg, args.instance)
    if args.switch == "moving-to-static":
        switched_track = moving_to_static(track, args.threshold)
    else:
        anchors = ring_anchors(track.centroids[0], ring_radius=args.ring_radius)
        switched_track = static_to_moving(
            track, agg, anchors, seed=args.seed or 0, threshold=args.threshold
        )
    switched = apply_switch(agg, track, switched_track)

    by_index = {f.index: f for f in frames}
    out_frames = []
    for index in sorted(by_index):
        frame = by_index[index]
        rows = switched.source_frame == index
        if index < first or not rows.any():
            out_frames.append(frame)
            continue
        moved = frame.labeled.instance == args.instance
        if not moved.any():
            out_frames.append(frame)
            continue
        # block rows keep the frame's own point order, so positions align
        back = relative_pose(frame.pose, by_index[t].pose)
        xyz = frame.labeled.cloud.xyz.copy()
        semantic = frame.labeled.semantic.copy()
        xyz[moved] = back.apply(switched.labeled.cloud.xyz[rows])[moved]
        semantic[moved] = switched.labeled.semantic[rows][moved]
        labeled = LabeledCloud(
            PointCloud(xyz, frame.labeled.cloud.intensity), semantic, frame.labeled.instance
        )
        out_frames.append(dataclasses.replace(frame, labeled=labeled))
    write_sequence(Path(args.out), out_frames, calib)
    print(
        f"switched instance {args.instance} {classify_motion(track, args.threshold)} -> "
        f"{classify_motion(switched_track, args.threshold)}; wrote {len(out_frames)} frames to {args.out}"
    )
    return 0


def _frame_image(seq_dir: Path, index: int):
    stem = seq_dir / "image_2" / f"{index:06d}"
    for suffix in (".ppm", ".pgm", ".fmap"):
        candidate = stem.with_suffix(suffix)
        if candidate.exists():
            return read_image(candidate)
    raise InvalidInputError(f"no image for frame {index} under {seq_dir / 'image_2'}")


def _cmd_lift(args) -> int:
    frames, calib = _load_source(args)
    if calib is None:
        raise InvalidInputError("no camera calibration available; cannot project")
    t = _pick_frame(frames, args.frame)
    if args.sequence:
        seq_dir = Path(args.sequence)
        images = {f.index: _frame_image(seq_dir, f.index) for f in frames}
    else:
        images = {
            f.index: synthetic_feature_image(calib, f.index, seed=args.seed or 0)
            for f in frames
        }
    lifted = aggregate_image_features(
        frames, images, calib, t, step=args.image_step, window=args.image_window
    )
    fused = fuse_to_voxels(
        lifted, scales=args.scales, seed=args.seed or 0, voxel_size=args.voxel_size
    )
    if args.out:
        save_voxel_maps(args.out, fused)
    counts = ", ".join(str(m.count) for m in fused)
    print(
        f"lifted {lifted.count} points from {len(set(lifted.source_frame.tolist()))} frames; "
        f"fused voxels per scale: {counts}"
    )
    return 0


def _cmd_distill(args) -> int:
    student = load_voxel_maps(args.student)
    teacher = load_voxel_maps(args.teacher)
    if len(student) != len(teacher):
        raise ConfigurationError(
            f"student has {len(student)} scales, teacher has {len(teacher)}"
        )
    losses = [
        distill_loss(s, t, mode=args.mode) for s, t in zip(student, teacher)
    ]
    for level, value in enumerate(losses):
        print(f"scale_{level} {value!r}")
    print(f"mean {sum(losses) / len(losses)!r}")
    return 0


def _cmd_bench(args) -> int:
    frames, _ = _load_source(args)
    t = _pick_frame(frames, args.frame)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    windows = [int(w) for w in args.windows.split(",") if w.strip()]
    division = None
    if any(s == "fsa" for s in strategies):
        division = _resolve_division(args.division)
    report = bench.run_bench(
        frames,
        strategies,
        t_values=[t],
        windows=windows,
        division=division,
        repeats=args.repeats,
        bytes_per_point=args.bytes_per_point,
    )
    text = report.to_machine() if args.format == "machine" else report.to_table()
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lidarseq", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", parents=[], help="render a synthetic scene spec to disk")
    p.add_argument("spec", help="scene spec YAML")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("aggregate", help="aggregate temporal sweeps into one cloud")
    _add_source(p)
    p.add_argument("--frame", type=int, default=None, help="reference frame t (default: last)")
    p.add_argument("--window", type=int, default=aggregation.DEFAULT_WINDOW)
    p.add_argument("--strategy", choices=("direct", "stepped", "fsa"), default="fsa")
    p.add_argument("--step", type=int, default=2, help="step for --strategy stepped")
    p.add_argument("--division", default="division3", help="preset name or YAML path")
    p.add_argument("--label-error-rate", type=float, default=0.0,
                   help="simulate historical predictions on past frames")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="write the cloud to this .npz")
    p.set_defaults(func=_cmd_aggregate)

    p = sub.add_parser("augment", help="switch an instance's motion state")
    _add_source(p)
    p.add_argument("--frame", type=int, default=None)
    p.add_argument("--instance", type=int, required=True)
    p.add_argument("--switch", choices=("static-to-moving", "moving-to-static"), required=True)
    p.add_argument("--threshold", type=float, default=0.2, help="motion threshold (m)")
    p.add_argument("--ring-radius", type=float, default=3.0, help="anchor ring radius (m)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("lift", help="lift image features and fuse to voxel maps")
    _add_source(p)
    p.add_argument("--frame", type=int, default=None)
    p.add_argument("--image-step", type=int, default=12)
    p.add_argument("--image-window", type=int, default=48)
    p.add_argument("--scales", type=int, default=3)
    p.add_argument("--voxel-size", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="write fused maps to this .npz")
    p.set_defaults(func=_cmd_lift)

    p = sub.add_parser("distill", help="loss between two voxel-map dumps")
    p.add_argument("--student", required=True, metavar="NPZ")
    p.add_argument("--teacher", required=True, metavar="NPZ")
    p.add_argument("--mode", choices=("mean", "frobenius"), default="mean")
    p.set_defaults(func=_cmd_distill)

    p = sub.add_parser("bench", help="compare aggregation strategies")
    _add_source(p)
    p.add_argument("--frame", type=int, default=None)
    p.add_argument("--strategies", default="direct,fsa",
                   help="comma-separated: direct, stepped:<s>, fsa")
    p.add_argument("--windows", default="16", help="comma-separated window sizes")
    p.add_argument("--division", default="division3")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--bytes-per-point", type=int, default=bench.DEFAULT_BYTES_PER_POINT)
    p.add_argument("--format", choices=("table", "machine"), default="table")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    try:
        if not argv:
            parser.print_help(sys.stderr)
            return 1
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            parser.print_help(sys.stderr)
            return 1
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        code = exc.code
        return int(code) if code is not None else 0
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
