"""Command-line interface.

Subcommands
-----------
track-pair      align two RGB-D rasters, print the estimated pose
track-seq       track a TUM-layout sequence at a keyframe interval
eval            compare an estimated trajectory against ground truth
synth           write a synthetic mini-dataset with exact ground truth
landscape       sample the coarsest-level cost over an x/y translation grid
feat-roundtrip  export a frame's feature tensors and verify the file format

Exit codes: 0 success, 2 unusable inputs, 3 solver failure (no valid pixels
or singular system).  Flags override config-file values which override the
built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import statistics
import sys
import time
from dataclasses import asdict, replace

import numpy as np
from PIL import Image

from . import dataset as ds
from .errors import AlignmentError, NoValidPixelsError
from .evaluation import (
    PairMetrics,
    accumulate,
    backprojected_points,
    epe,
    read_trajectory,
    rpe,
    write_metrics_csv,
    write_trajectory,
)
from .features import (
    FeatureProviderSpec,
    frame_feature_tensors,
    load_feature_file,
    make_frame,
    to_grayscale,
    write_feature_file,
)
from .geometry import (
    CameraIntrinsics,
    Pose,
    compose,
    exp,
    format_pose_line,
    inverse,
    parse_pose_line,
)
from .residuals import build_feature_system, precompute_template
from .solver import SolverConfig, initialize, load_config, track

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3


def _read_rgbd(rgb_path: str, depth_path: str):
    for path in (rgb_path, depth_path):
        if not os.path.isfile(path):
            raise AlignmentError(f"missing input file: {path}")
    gray = to_grayscale(np.asarray(Image.open(rgb_path).convert("RGB")))
    depth = ds._read_depth_raster(depth_path)
    return gray, depth


def _intrinsics_for(shape, spec: str | None) -> CameraIntrinsics:
    h, w = shape
    if spec:
        fx, fy, cx, cy = (float(v) for v in spec.split(","))
        return CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=w, height=h)
    scale = w / ds.DEFAULT_SYNTH_INTRINSICS.width
    return CameraIntrinsics(
        fx=ds.DEFAULT_SYNTH_INTRINSICS.fx * scale,
        fy=ds.DEFAULT_SYNTH_INTRINSICS.fy * scale,
        cx=w / 2.0,
        cy=h / 2.0,
        width=w,
        height=h,
    )


def _pair_providers(args) -> tuple[FeatureProviderSpec, FeatureProviderSpec]:
    if args.provider != "external":
        spec = FeatureProviderSpec(args.provider)
        return spec, spec
    if not args.features or "," not in args.features:
        raise AlignmentError(
            "--provider external needs --features FILE_A,FILE_B for a pair"
        )
    path_a, path_b = (p.strip() for p in args.features.split(",", 1))
    return (
        FeatureProviderSpec("external", source_path=path_a),
        FeatureProviderSpec("external", source_path=path_b),
    )


def _solver_config(args) -> SolverConfig:
    config = SolverConfig()
    if args.config:
        config = load_config(args.config, config)
    overrides = {}
    if args.levels is not None:
        overrides["levels"] = args.levels
    if args.iters is not None:
        overrides["iterations_per_level"] = args.iters
    if args.damping is not None:
        overrides["damping"] = args.damping
    if args.wg is not None:
        overrides["w_g"] = args.wg
    if args.init is not None:
        overrides["initializer"] = {"identity": "identity", "constvel": "constvel", "external": "external"}[args.init]
    if args.icp:
        overrides["mode"] = "combined"
    return replace(config, **overrides)


def _external_init(args) -> Pose | None:
    return parse_pose_line(args.init_pose) if args.init_pose else None


def _print_result(result, config) -> None:
    print(f"pose: {format_pose_line(result.pose)}")
    print(f"initializer: {format_pose_line(result.initializer_pose)}")
    print(f"converged: {result.converged}")
    for i, trace in enumerate(result.per_level_costs):
        level = config.levels - 1 - i
        costs = " ".join(f"{c:.6e}" for c in trace)
        print(f"level {level}: valid={result.valid_counts[i]} costs: {costs}")


def _write_report(path, result, config, runtime_s: float) -> None:
    report = {
        "pose": format_pose_line(result.pose),
        "initializer_pose": format_pose_line(result.initializer_pose),
        "converged": result.converged,
        "skipped_levels": list(result.skipped_levels),
        "singular_levels": list(result.singular_levels),
        "per_level_costs": [list(t) for t in result.per_level_costs],
        "valid_counts": list(result.valid_counts),
        "config": asdict(config),
        "runtime_s": runtime_s,
    }
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")


def cmd_track_pair(args) -> int:
    gray_a, depth_a = _read_rgbd(args.rgb_a, args.depth_a)
    gray_b, depth_b = _read_rgbd(args.rgb_b, args.depth_b)
    intr = _intrinsics_for(gray_a.shape, args.intrinsics)
    config = _solver_config(args)
    provider_a, provider_b = _pair_providers(args)
    frame_a = make_frame(gray_a, depth_a, intr, provider_a, levels=config.levels)
    frame_b = make_frame(gray_b, depth_b, intr, provider_b, levels=config.levels)

    init = initialize(None, _external_init(args), config)
    start = time.perf_counter()
    result = track(frame_a, frame_b, config, init)
    runtime = time.perf_counter() - start

    _print_result(result, config)
    if args.out:
        _write_report(args.out, result, config, runtime)
    return EXIT_OK if result.converged else EXIT_SOLVER


def cmd_track_seq(args) -> int:
    index = ds.load_sequence(args.directory, max_dt=args.max_dt)
    config = _solver_config(args)
    first_rgb = np.asarray(Image.open(index.associated[0].rgb_path))
    source_intr = _camera_model(args.camera, first_rgb.shape[:2], args.intrinsics)
    target = tuple(int(v) for v in args.resolution.split("x"))
    provider = (
        FeatureProviderSpec(args.provider)
        if args.provider != "external"
        else None
    )

    pairs = ds.subsample_pairs(index, args.kf)
    if not pairs:
        raise AlignmentError("no evaluation pairs with ground truth")

    frames: dict[int, object] = {}

    def frame_at(i: int):
        if i not in frames:
            entry = index.associated[i]
            spec = provider
            if spec is None:
                stem = os.path.splitext(os.path.basename(entry.rgb_path))[0]
                spec = FeatureProviderSpec(
                    "external", source_path=os.path.join(args.features, stem + ".dfmt")
                )
            frames[i] = ds.load_frame(entry, source_intr, target, spec, config.levels)
        return frames[i]

    rows = []
    poses = {}
    prev_motion = None
    for pair in pairs:
        try:
            frame_a, frame_b = frame_at(pair.index_a), frame_at(pair.index_b)
            init = initialize(prev_motion, None, config)
            result = track(frame_a, frame_b, config, init)
            if not result.converged:
                raise NoValidPixelsError(
                    f"skipped={result.skipped_levels} singular={result.singular_levels}"
                )
            points = backprojected_points(frame_b)
            rows.append(
                PairMetrics(
                    pair.frame_b.timestamp,
                    epe(pair.gt_relative, result.pose, points),
                    *rpe(pair.gt_relative, result.pose),
                )
            )
            poses[pair.index_a] = result.pose
            prev_motion = result.pose
        except AlignmentError as exc:
            print(f"pair ({pair.index_a},{pair.index_b}) failed: {exc}", file=sys.stderr)
            rows.append(PairMetrics(pair.frame_b.timestamp, math.nan, math.nan, math.nan))

    if args.out:
        write_metrics_csv(args.out, rows)
    if args.traj:
        chain = []
        i = pairs[0].index_a
        while i in poses:
            stamp = index.associated[i + args.kf].timestamp
            chain.append((stamp, poses[i]))
            i += args.kf
        record = accumulate(chain, start_timestamp=index.associated[pairs[0].index_a].timestamp)
        write_trajectory(args.traj, record)

    good = [r for r in rows if not math.isnan(r.epe)]
    print(f"pairs: {len(rows)}  tracked: {len(good)}")
    if good:
        for name, values in (
            ("epe_m", [r.epe for r in good]),
            ("rpe_trans_m", [r.rpe_trans for r in good]),
            ("rpe_rot_deg", [math.degrees(r.rpe_rot) for r in good]),
        ):
            print(
                f"{name}: mean {statistics.mean(values):.6f} "
                f"median {statistics.median(values):.6f}"
            )
    return EXIT_OK


def _camera_model(name: str, shape, spec: str | None) -> CameraIntrinsics:
    h, w = shape
    if spec:
        return _intrinsics_for((h, w), spec)
    if name in ("fr1", "fr2"):
        return ds.TUM_INTRINSICS[name]
    if name == "auto" and (w, h) == (640, 480):
        return ds.TUM_INTRINSICS["fr1"]
    return _intrinsics_for((h, w), None)


def cmd_eval(args) -> int:
    est = read_trajectory(args.est)
    gt = read_trajectory(args.gt)
    matches = ds.associate_timestamps(
        [t for t, _ in est.entries], [t for t, _ in gt.entries], args.max_dt
    )
    if len(matches) < args.kf + 1:
        raise AlignmentError("not enough matched timestamps to evaluate")
    rows = []
    for (i0, j0), (i1, j1) in zip(matches, matches[args.kf :]):
        est_rel = compose(inverse(est.entries[i0][1]), est.entries[i1][1])
        gt_rel = compose(inverse(gt.entries[j0][1]), gt.entries[j1][1])
        trans, rot = rpe(gt_rel, est_rel)
        rows.append(PairMetrics(est.entries[i1][0], math.nan, trans, rot))
    if args.out:
        write_metrics_csv(args.out, rows)
    print(f"pairs: {len(rows)}")
    print(f"rpe_trans_m: mean {statistics.mean(r.rpe_trans for r in rows):.6f}")
    print(
        "rpe_rot_deg: mean "
        f"{statistics.mean(math.degrees(r.rpe_rot) for r in rows):.6f}"
    )
    return EXIT_OK


def cmd_synth(args) -> int:
    xi = np.array([float(v) for v in args.motion.split(",")])
    if xi.shape != (6,):
        raise AlignmentError("--motion needs 6 comma-separated values")
    scene_fn = {
        "plane": ds.SynthScene.plane_scene,
        "corner": ds.SynthScene.corner_scene,
    }[args.scene]
    scene = scene_fn(noise=args.noise)
    ds.write_synth_sequence(args.out, scene, exp(xi), n_frames=args.frames, seed=args.seed)
    print(f"wrote {args.frames} frames to {args.out}")
    return EXIT_OK


def cmd_landscape(args) -> int:
    gray_a, depth_a = _read_rgbd(args.rgb_a, args.depth_a)
    gray_b, depth_b = _read_rgbd(args.rgb_b, args.depth_b)
    intr = _intrinsics_for(gray_a.shape, args.intrinsics)
    config = _solver_config(args)
    provider_a, provider_b = _pair_providers(args)
    frame_a = make_frame(gray_a, depth_a, intr, provider_a, levels=config.levels)
    frame_b = make_frame(gray_b, depth_b, intr, provider_b, levels=config.levels)
    reference = parse_pose_line(args.ref)

    level = config.levels - 1
    template = precompute_template(frame_b, level)
    if args.grid_steps == 1:
        offsets = np.array([0.0])
    else:
        offsets = np.linspace(-args.grid_range, args.grid_range, args.grid_steps)

    lines = ["dx_m,dy_m,cost"]
    from .geometry import log

    for dy in offsets:
        for dx in offsets:
            moved = Pose(
                reference.rotation,
                reference.translation + np.array([dx, dy, 0.0]),
            )
            try:
                cost = build_feature_system(frame_a, template, log(moved), level).cost
                lines.append(f"{dx:.6f},{dy:.6f},{cost:.9e}")
            except NoValidPixelsError:
                lines.append(f"{dx:.6f},{dy:.6f},nan")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text, end="")
    return EXIT_OK


def cmd_feat_roundtrip(args) -> int:
    gray, depth = _read_rgbd(args.rgb, args.depth)
    intr = _intrinsics_for(gray.shape, args.intrinsics)
    levels = args.levels if args.levels is not None else 4
    provider = FeatureProviderSpec(args.provider)
    frame = make_frame(gray, depth, intr, provider, levels=levels)
    feats, sigmas = frame_feature_tensors(frame)
    write_feature_file(args.out, feats, sigmas)
    feats2, sigmas2 = load_feature_file(args.out)
    for i, (f, f2, s, s2) in enumerate(zip(feats, feats2, sigmas, sigmas2)):
        if not np.array_equal(f.astype(np.float32), f2) or not np.array_equal(
            s.astype(np.float32), s2
        ):
            raise AlignmentError(f"round-trip mismatch at level {i}")
        print(f"level {i}: {f2.shape[1]}x{f2.shape[0]} channels={f2.shape[2]} ok")
    print(f"wrote {args.out}")
    return EXIT_OK


def _add_solver_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--provider", choices=("intensity", "intensitygrad", "external"),
                        default="intensity", help="feature provider (default intensity)")
    parser.add_argument("--features", help="external feature file(s) or directory")
    parser.add_argument("--icp", action="store_true", help="fuse the point-to-plane term")
    parser.add_argument("--wg", type=float, default=None, help="ICP weight (default 0.01)")
    parser.add_argument("--levels", type=int, default=None, help="pyramid levels (default 4)")
    parser.add_argument("--iters", type=int, default=None, help="iterations per level (default 3)")
    parser.add_argument("--damping", type=float, default=None, help="Gauss-Newton damping")
    parser.add_argument("--init", choices=("identity", "constvel", "external"), default=None)
    parser.add_argument("--init-pose", help="pose line for --init external")
    parser.add_argument("--config", help="solver config file (key = value lines)")
    parser.add_argument("--intrinsics", help="fx,fy,cx,cy (default: synthetic camera)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rgbdalign", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track-pair", help="align two RGB-D frames")
    p.add_argument("rgb_a")
    p.add_argument("depth_a")
    p.add_argument("rgb_b")
    p.add_argument("depth_b")
    _add_solver_flags(p)
    p.add_argument("--out", help="write a JSON report")
    p.set_defaults(func=cmd_track_pair)

    p = sub.add_parser("track-seq", help="track a TUM-layout sequence")
    p.add_argument("directory")
    p.add_argument("--kf", type=int, default=1, help="keyframe interval (default 1)")
    p.add_argument("--max-dt", type=float, default=ds.DEFAULT_MAX_DT)
    p.add_argument("--camera", choices=("auto", "fr1", "fr2", "synth"), default="auto")
    p.add_argument("--resolution", default="160x120", help="working resolution WxH")
    _add_solver_flags(p)
    p.add_argument("--out", help="write per-pair metrics CSV")
    p.add_argument("--traj", help="write the accumulated trajectory")
    p.set_defaults(func=cmd_track_seq)

    p = sub.add_parser("eval", help="compare trajectories")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--kf", type=int, default=1)
    p.add_argument("--max-dt", type=float, default=ds.DEFAULT_MAX_DT)
    p.add_argument("--out", help="write per-pair metrics CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic mini-dataset")
    p.add_argument("--motion", required=True, help="twist: tx,ty,tz,rx,ry,rz")
    p.add_argument("--noise", type=float, default=0.0, help="depth noise std (m)")
    p.add_argument("--frames", type=int, default=2)
    p.add_argument("--scene", choices=("plane", "corner"), default="plane")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("landscape", help="cost over an x/y translation grid")
    p.add_argument("rgb_a")
    p.add_argument("depth_a")
    p.add_argument("rgb_b")
    p.add_argument("depth_b")
    p.add_argument("--ref", required=True, help="reference pose line (tx ty tz qx qy qz qw)")
    p.add_argument("--grid-range", type=float, default=0.3, help="half extent in meters")
    p.add_argument("--grid-steps", type=int, default=41)
    _add_solver_flags(p)
    p.add_argument("--out", help="write CSV (default: stdout)")
    p.set_defaults(func=cmd_landscape)

    p = sub.add_parser("feat-roundtrip", help="export and verify feature tensors")
    p.add_argument("rgb")
    p.add_argument("depth")
    p.add_argument("--provider", choices=("intensity", "intensitygrad"), default="intensity")
    p.add_argument("--levels", type=int, default=None)
    p.add_argument("--intrinsics", help="fx,fy,cx,cy")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_feat_roundtrip)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (AlignmentError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
