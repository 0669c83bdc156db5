"""``d2s`` command line: one subcommand per stage plus ``run`` for the whole pipeline.

Exit codes: 0 success, 1 stage failure, 2 usage error, 3 validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from d2s.depth_core import FIXTURE_KINDS, fixture_intrinsics, generate_fixture, load_depth_map, save_depth_map
from d2s.mesh import read_mesh_ply
from d2s.mesh_validation import ValidationThresholds
from d2s.meshing import MESH_ALGORITHMS
from d2s.pipeline import (
    ConfigError,
    PipelineConfig,
    StageError,
    dump_json,
    parse_extrinsics,
    parse_intrinsics,
    prepare_depth,
    run_pipeline,
    stage_analysis,
    stage_cloud,
    stage_mesh,
    stage_validate,
    write_mesh_files,
)
from d2s.pointcloud import read_ply
from d2s.segmentation import ALGORITHMS, default_params, load_labels, run_algorithm, save_labels, segment_auto

logger = logging.getLogger("d2s")

EXIT_OK, EXIT_STAGE, EXIT_USAGE, EXIT_VALIDATION = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _param(text: str) -> tuple[str, object]:
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def _thresholds(path) -> ValidationThresholds:
    if path is None:
        return ValidationThresholds()
    return ValidationThresholds.from_dict(json.loads(Path(path).read_text()))


def _load_depth(args):
    return prepare_depth(load_depth_map(args.depth, args.format), args.filter_window)


def _depth_args(p, required=True):
    p.add_argument("--depth", required=required, help="depth map (pgm/csv/raw)")
    p.add_argument("--format", choices=["pgm16", "csv", "rawf32"], help="override format detection")
    p.add_argument("--filter-window", type=int, default=3, help="median window; <3 disables (default 3)")


def cmd_fixtures(args) -> int:
    params = dict(args.param or [])
    depth = generate_fixture(args.kind, args.width, args.height, params)
    save_depth_map(depth, args.out)
    if args.intrinsics_out:
        dump_json(fixture_intrinsics(args.kind, args.width, args.height, params).to_dict(), args.intrinsics_out)
    return EXIT_OK


def cmd_stats(args) -> int:
    doc, _ = stage_analysis(_load_depth(args), args.seed, args.k)
    text = dump_json(doc, args.out)
    if args.out is None:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_segment(args) -> int:
    depth = _load_depth(args)
    if args.algorithm == "auto":
        result = segment_auto(depth, args.k)
    else:
        result = run_algorithm(args.algorithm, depth, default_params(args.algorithm, depth))
    save_labels(result, args.out)
    return EXIT_OK


def cmd_cloud(args) -> int:
    depth = _load_depth(args)
    labels = load_labels(args.labels).labels if args.labels else None
    stage_cloud(depth, parse_intrinsics(args.intrinsics), parse_extrinsics(args.extrinsics), labels, args.normals_k, args.out)
    return EXIT_OK


def cmd_mesh(args) -> int:
    cloud = read_ply(args.cloud)
    depth = _load_depth(args) if args.depth else None
    meshing = None
    if args.algo != "auto":
        meshing = {"algorithm": args.algo}
        if args.alpha is not None:
            meshing["alpha"] = args.alpha
        if args.radii:
            meshing["radii"] = [float(r) for r in args.radii.split(",")]
        if args.max_edge_jump is not None:
            meshing["max_edge_jump"] = args.max_edge_jump
    mesh, doc = stage_mesh(depth, cloud, meshing, _thresholds(args.thresholds))
    write_mesh_files(mesh, args.out, args.obj)
    dump_json(doc, args.report or Path(args.out).with_suffix(".json"))
    return EXIT_OK


def cmd_validate(args) -> int:
    mesh = read_mesh_ply(args.mesh)
    cloud = read_ply(args.cloud)
    doc = stage_validate(mesh, cloud, _thresholds(args.thresholds), args.density, args.seed)
    text = dump_json(doc, args.out)
    if args.out is None:
        sys.stdout.write(text)
    return EXIT_OK if doc["overall"] else EXIT_VALIDATION


def cmd_animate(args) -> int:
    from d2s.scene_video import animate, load_scene_spec

    _, report = animate(load_scene_spec(args.scene), args.out)
    dump_json(report.to_dict(), Path(args.out) / "video_report.json")
    return EXIT_OK if report.passed else EXIT_VALIDATION


def cmd_run(args) -> int:
    try:
        config = PipelineConfig.load(args.config)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    if args.output_dir:
        config.output_dir = Path(args.output_dir)
    if args.seed is not None:
        config.seed = args.seed
    try:
        report = run_pipeline(config)
    except StageError as exc:
        logger.error("%s", exc)
        return EXIT_STAGE
    return EXIT_OK if report.passed else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="d2s", description="Depth map to point cloud, mesh and animation.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixtures", help="write a synthetic depth fixture")
    p.add_argument("--kind", choices=FIXTURE_KINDS, required=True)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--param", type=_param, action="append", help="fixture parameter key=value (JSON value)")
    p.add_argument("--out", required=True)
    p.add_argument("--intrinsics-out", help="also write the fixture's intrinsics JSON")
    p.set_defaults(func=cmd_fixtures)

    p = sub.add_parser("stats", help="depth statistics, features, keypoints and segmentation summary")
    _depth_args(p)
    p.add_argument("--k", type=int, default=3, help="segmentation candidates to try")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("segment", help="segment a depth map into a label PGM plus JSON sidecar")
    _depth_args(p)
    p.add_argument("--algorithm", choices=("auto",) + ALGORITHMS, default="auto")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("cloud", help="unproject a depth map to a PLY point cloud with normals")
    _depth_args(p)
    p.add_argument("--intrinsics", required=True, help="JSON file or fx,fy,cx,cy")
    p.add_argument("--extrinsics", help="JSON file with rotation and translation")
    p.add_argument("--labels", help="label PGM from the segment subcommand")
    p.add_argument("--normals-k", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cloud)

    p = sub.add_parser("mesh", help="mesh a PLY cloud (validated, with fallbacks)")
    p.add_argument("--cloud", required=True)
    _depth_args(p, required=False)
    p.add_argument("--algo", choices=("auto",) + MESH_ALGORITHMS, default="auto")
    p.add_argument("--alpha", type=float)
    p.add_argument("--radii", help="comma-separated ball radii for bpa")
    p.add_argument("--max-edge-jump", type=float)
    p.add_argument("--thresholds", help="validation thresholds JSON")
    p.add_argument("--out", required=True, help="mesh PLY")
    p.add_argument("--obj", help="also write Wavefront OBJ")
    p.add_argument("--report", help="metrics JSON (default: <out>.json)")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("validate", help="validate a mesh against its source cloud")
    p.add_argument("--mesh", required=True)
    p.add_argument("--cloud", required=True)
    p.add_argument("--thresholds")
    p.add_argument("--density", type=float, default=10.0, help="Hausdorff samples per unit area")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("animate", help="render a scene-spec JSON to PPM frames")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_animate)

    p = sub.add_parser("run", help="run the whole pipeline from a config JSON")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"d2s: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError) as exc:
        print(f"d2s {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
