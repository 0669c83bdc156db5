"""End-to-end orchestration: depth map -> analysis -> cloud -> mesh -> validation.

The stage functions here are shared with the CLI subcommands, so chaining
subcommands through files reproduces the artifacts of :func:`run_pipeline`.
Reports carry no timings or absolute paths; identical configs give identical
bytes.
"""

from __future__ import annotations

import json
import logging
import shutil
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from d2s.depth_core import (
    CameraExtrinsics,
    CameraIntrinsics,
    DepthMap,
    allocate_budget,
    depth_stats,
    detect_keypoints,
    fixture_intrinsics,
    generate_fixture,
    load_depth_map,
    median_filter,
)
from d2s.mesh import TriangleMesh, read_mesh_ply, write_mesh_ply, write_obj
from d2s.mesh_validation import (
    ValidationThresholds,
    edge_length_stats,
    evaluate_mesh,
    hausdorff,
    topology_check,
    triangle_quality,
    validate_and_regenerate,
)
from d2s.meshing import MeshAlgoChoice, MeshingParams, select_mesh_algorithm
from d2s.pointcloud import PointCloud, estimate_normals, read_ply, unproject, write_ply
from d2s.segmentation import SegmentationResult, extract_features, rank_algorithms, segment_auto

logger = logging.getLogger(__name__)

SCHEMA = "d2s/1"
ARTIFACTS = ("analysis.json", "cloud.ply", "mesh.ply", "mesh.obj", "validation.json")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception, report: "RunReport"):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.report = report


def dump_json(obj, path=None) -> str:
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


# ---------------------------------------------------------------- config


@dataclass
class PipelineConfig:
    output_dir: Path
    depth_path: Path | None = None
    depth_format: str | None = None
    fixture: dict | None = None
    intrinsics: CameraIntrinsics | None = None
    extrinsics: CameraExtrinsics = field(default_factory=CameraExtrinsics)
    filter_window: int = 3
    segmentation_k: int = 3
    keypoints: int = 64
    budget_clusters: int = 4
    total_budget: int = 1000
    normals_k: int = 8
    meshing: dict | None = None
    validation: ValidationThresholds = field(default_factory=ValidationThresholds)
    hausdorff_density: float = 10.0
    animation: Path | None = None
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "PipelineConfig":
        base = base or Path(".")
        if d.get("schema") != SCHEMA:
            raise ConfigError(f"config schema must be {SCHEMA!r}")
        inp = d.get("input") or {}
        if ("depth" in inp) == ("fixture" in inp):
            raise ConfigError("input needs exactly one of 'depth' or 'fixture'")
        if "output_dir" not in d:
            raise ConfigError("config needs output_dir")
        stages = d.get("stages", {})
        try:
            cfg = cls(
                output_dir=base / d["output_dir"],
                depth_path=base / inp["depth"] if "depth" in inp else None,
                depth_format=inp.get("format"),
                fixture=inp.get("fixture"),
                intrinsics=parse_intrinsics(d["intrinsics"]) if d.get("intrinsics") else None,
                extrinsics=parse_extrinsics(d.get("extrinsics")),
                filter_window=int(stages.get("filter_window", 3)),
                segmentation_k=int(stages.get("segmentation_k", 3)),
                keypoints=int(stages.get("keypoints", 64)),
                budget_clusters=int(stages.get("budget_clusters", 4)),
                total_budget=int(stages.get("total_budget", 1000)),
                normals_k=int(stages.get("normals_k", 8)),
                meshing=stages.get("meshing"),
                validation=ValidationThresholds.from_dict(stages.get("validation")),
                hausdorff_density=float(stages.get("hausdorff_density", 10.0)),
                animation=base / stages["animation"] if stages.get("animation") else None,
                seed=int(d.get("seed", 0)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if cfg.depth_path is not None and not cfg.depth_path.exists():
            raise ConfigError(f"input depth map {cfg.depth_path} does not exist")
        if cfg.animation is not None and not cfg.animation.exists():
            raise ConfigError(f"animation spec {cfg.animation} does not exist")
        if cfg.depth_path is not None and cfg.intrinsics is None:
            raise ConfigError("a depth-file input needs intrinsics")
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(d, path.parent)


def parse_intrinsics(spec) -> CameraIntrinsics:
    """From a dict, a JSON file path, or an 'fx,fy,cx,cy' string."""
    if isinstance(spec, CameraIntrinsics):
        return spec
    if isinstance(spec, str):
        if Path(spec).exists():
            spec = json.loads(Path(spec).read_text())
        else:
            parts = [float(x) for x in spec.split(",")]
            if len(parts) != 4:
                raise ValueError("intrinsics string must be fx,fy,cx,cy")
            spec = dict(zip(("fx", "fy", "cx", "cy"), parts))
    return CameraIntrinsics(**{k: float(spec[k]) for k in ("fx", "fy", "cx", "cy")})


def parse_extrinsics(spec) -> CameraExtrinsics:
    if spec is None:
        return CameraExtrinsics()
    if isinstance(spec, str):
        spec = json.loads(Path(spec).read_text())
    return CameraExtrinsics(spec.get("rotation", np.eye(3)), spec.get("translation", np.zeros(3)))


# ---------------------------------------------------------------- stages


def stage_load(config: PipelineConfig) -> tuple[DepthMap, CameraIntrinsics]:
    if config.fixture is not None:
        fx = config.fixture
        kind, w, h = fx["kind"], int(fx.get("width", 64)), int(fx.get("height", 64))
        params = fx.get("params") or {}
        depth = generate_fixture(kind, w, h, params)
        intr = config.intrinsics or fixture_intrinsics(kind, w, h, params)
        return depth, intr
    return load_depth_map(config.depth_path, config.depth_format), config.intrinsics


def prepare_depth(depth: DepthMap, window: int) -> DepthMap:
    """Median-filter with ``window``; windows below 3 leave the map as is."""
    if window < 3:
        return depth
    return median_filter(depth, window)


def stage_analysis(
    depth: DepthMap, seed: int, seg_k: int = 3, max_keypoints: int = 64, clusters: int = 4, total_budget: int = 1000
) -> tuple[dict, SegmentationResult]:
    stats = depth_stats(depth)
    features = extract_features(depth)
    kps = detect_keypoints(depth, max_keypoints)
    budget = None
    if kps:
        b = allocate_budget(kps, min(clusters, len(kps)), total_budget, seed)
        budget = {
            "centers": np.asarray(b.cluster_centers).tolist(),
            "budget_per_cluster": list(b.budget_per_cluster),
            "counts": list(b.counts),
            "iterations": len(b.wcss_history),
        }
    seg = segment_auto(depth, seg_k)
    analysis = {
        "stats": stats.to_dict(),
        "features": features.to_dict(),
        "ranking": [[a, s] for a, s in rank_algorithms(features, seg_k).ranking],
        "segmentation": seg.sidecar(),
        "keypoints": [[kp.x, kp.y, kp.score] for kp in kps],
        "budget": budget,
    }
    return _jsonable(analysis), seg


def stage_cloud(
    depth: DepthMap, intr: CameraIntrinsics, extr: CameraExtrinsics, labels, normals_k: int, path
) -> PointCloud:
    """Unproject, estimate normals, write PLY and return the cloud as re-read from disk."""
    cloud = unproject(depth, intr, extr, labels)
    cloud = estimate_normals(cloud, normals_k)
    write_ply(cloud, path)
    return read_ply(path)


def stage_mesh(depth: DepthMap | None, cloud: PointCloud, meshing: dict | None, thresholds: ValidationThresholds):
    """Select (or take) meshing parameters and run the validate-then-regenerate loop."""
    if meshing and meshing.get("algorithm", "auto") != "auto":
        params = MeshingParams(**meshing)
        auto = select_mesh_algorithm(depth, cloud) if depth is not None else None
        fallbacks = [a for a in (auto.fallbacks if auto else ["delaunay25", "grid"]) if a != params.algorithm]
        if auto and auto.chosen != params.algorithm:
            fallbacks = [auto.chosen] + [a for a in fallbacks if a != auto.chosen]
        choice = MeshAlgoChoice(params.algorithm, {"rule": "user override"}, params, fallbacks)
    else:
        if depth is None:
            raise ValueError("automatic selection needs the depth map")
        choice = select_mesh_algorithm(depth, cloud)
    mesh, report = validate_and_regenerate(depth, cloud, choice, thresholds)
    doc = {"choice": choice.to_dict(), "attempts": report.attempts, "selected_attempt": report.selected_attempt}
    return mesh, _jsonable(doc)


def write_mesh_files(mesh: TriangleMesh, ply_path, obj_path=None) -> TriangleMesh:
    write_mesh_ply(mesh, ply_path)
    if obj_path is not None:
        write_obj(mesh, obj_path)
    return read_mesh_ply(ply_path)


def stage_validate(
    mesh: TriangleMesh, cloud: PointCloud, thresholds: ValidationThresholds, density: float, seed: int
) -> dict:
    metrics = evaluate_mesh(mesh, cloud, thresholds)
    doc = {"metrics": metrics, "overall": all(m["passed"] for m in metrics.values())}
    if not mesh.is_empty():
        doc["hausdorff"] = hausdorff(cloud.positions, mesh, density, seed).to_dict()
        doc["edge_lengths"] = edge_length_stats(mesh).to_dict()
        doc["quality"] = triangle_quality(mesh).to_dict()
    doc["topology"] = topology_check(mesh).to_dict()
    doc["thresholds"] = thresholds.to_dict()
    return _jsonable(doc)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, Path):
        return obj.as_posix()
    return obj


# ---------------------------------------------------------------- run


@dataclass
class RunReport:
    stages: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    segmentation: dict | None = None
    meshing: dict | None = None
    validation: dict | None = None
    animation: dict | None = None
    failed_stage: str | None = None
    error: str | None = None
    timings: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.failed_stage is None and bool(self.validation and self.validation["overall"])

    def to_dict(self) -> dict:
        # timings stay out of the file so reruns are byte-identical
        return _jsonable(
            {
                "schema": SCHEMA,
                "stages": self.stages,
                "artifacts": sorted(self.artifacts),
                "segmentation": self.segmentation,
                "meshing": self.meshing,
                "validation": {"overall": self.validation["overall"]} if self.validation else None,
                "animation": self.animation,
                "failed_stage": self.failed_stage,
                "error": self.error,
                "passed": self.passed,
            }
        )


def run_pipeline(config: PipelineConfig) -> RunReport:
    """Run every stage and write artifacts plus ``run_report.json`` into ``output_dir``.

    Raises:
        StageError: a stage raised; the partial report is written first.
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = RunReport()
    state: dict = {}

    def stage(name, fn):
        t0 = time.perf_counter()
        try:
            result = fn()
        except Exception as exc:
            report.failed_stage, report.error = name, f"{type(exc).__name__}: {exc}"
            dump_json(report.to_dict(), out / "run_report.json")
            raise StageError(name, exc, report) from exc
        report.timings[name] = time.perf_counter() - t0
        report.stages.append(name)
        logger.info("stage %s done in %.3fs", name, report.timings[name])
        return result

    depth, intr = stage("load", lambda: stage_load(config))
    depth = stage("filter", lambda: prepare_depth(depth, config.filter_window))

    def analysis():
        doc, seg = stage_analysis(
            depth, config.seed, config.segmentation_k, config.keypoints, config.budget_clusters, config.total_budget
        )
        dump_json(doc, out / "analysis.json")
        return doc, seg

    doc, seg = stage("analysis", analysis)
    report.artifacts.append("analysis.json")
    report.segmentation = {"algorithm": seg.algorithm, "regions": seg.region_count, "satisfactory": seg.satisfactory}

    cloud = stage(
        "cloud",
        lambda: stage_cloud(depth, intr, config.extrinsics, seg.label_map.labels, config.normals_k, out / "cloud.ply"),
    )
    report.artifacts.append("cloud.ply")

    def meshing():
        mesh, mesh_doc = stage_mesh(depth, cloud, config.meshing, config.validation)
        mesh = write_mesh_files(mesh, out / "mesh.ply", out / "mesh.obj")
        return mesh, mesh_doc

    mesh, mesh_doc = stage("mesh", meshing)
    report.artifacts += ["mesh.ply", "mesh.obj"]
    report.meshing = {
        "chosen": mesh_doc["choice"]["chosen"],
        "rationale": mesh_doc["choice"]["rationale"],
        "attempts": [{"algorithm": a["algorithm"], "passed": a["passed"]} for a in mesh_doc["attempts"]],
        "selected_attempt": mesh_doc["selected_attempt"],
    }

    def validation():
        v = stage_validate(mesh, cloud, config.validation, config.hausdorff_density, config.seed)
        dump_json({"meshing": mesh_doc, "validation": v}, out / "validation.json")
        return v

    report.validation = stage("validate", validation)
    report.artifacts.append("validation.json")

    if config.animation is not None:
        from d2s.scene_video import animate, load_scene_spec

        def anim():
            anim_dir = out / "animation"
            if anim_dir.exists():
                shutil.rmtree(anim_dir)
            manifest, video = animate(load_scene_spec(config.animation), anim_dir)
            return manifest, video

        manifest, video = stage("animate", anim)
        report.animation = {"manifest": "animation/manifest.json", "passed": video.passed}
        report.artifacts += sorted(
            p.relative_to(out).as_posix() for p in (out / "animation").iterdir()
        )

    dump_json(report.to_dict(), out / "run_report.json")
    for name, sec in report.timings.items():
        print(f"[d2s] {name}: {sec:.3f}s", file=sys.stderr)
    return report
