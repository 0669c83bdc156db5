"""Rule-based choice of a meshing algorithm from depth-map and cloud analysis."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from d2s.depth_core import DepthMap, depth_gradients, depth_stats
from d2s.mesh import TriangleMesh
from d2s.meshing.ballpivot import ADAPTIVE_K, ball_pivot
from d2s.meshing.mls import mls_smooth
from d2s.meshing.triangulate import alpha_shape, delaunay_2_5d, grid_mesh
from d2s.pointcloud import PointCloud, SpatialIndex
from d2s.segmentation import boundary_threshold

MESH_ALGORITHMS = ("grid", "delaunay25", "alpha", "bpa", "bpa_adaptive")
# fallback preference once the selected algorithm has been tried
FALLBACK_ORDER = ("delaunay25", "grid", "bpa_adaptive", "alpha", "bpa")


@dataclass
class MeshingParams:
    algorithm: str
    max_edge_jump: float | None = None
    alpha: float | None = None
    radii: list | str | None = None
    smooth: bool = False
    mls_radius: float | None = None
    mls_degree: int = 2

    def __post_init__(self):
        if self.algorithm not in MESH_ALGORITHMS:
            raise ValueError(f"unknown meshing algorithm {self.algorithm!r}")
        if self.algorithm == "alpha" and not (self.alpha and self.alpha > 0):
            raise ValueError("alpha meshing needs alpha > 0")
        if self.algorithm == "bpa" and not self.radii:
            raise ValueError("bpa needs a radius list")
        if self.smooth and not (self.mls_radius and self.mls_radius > 0):
            raise ValueError("smoothing needs mls_radius > 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SelectorConfig:
    density_cv: float = 0.5
    boundary_fraction: float = 0.1
    mls_radius_factor: float = 3.0
    alpha_factor: float = 3.0
    bpa_radius_factor: float = 1.3


@dataclass
class MeshAlgoChoice:
    chosen: str
    rationale: dict
    params: MeshingParams
    fallbacks: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "chosen": self.chosen,
            "rationale": self.rationale,
            "params": self.params.to_dict(),
            "fallbacks": list(self.fallbacks),
        }


def median_spacing(points: np.ndarray) -> float:
    """Median nearest-neighbour distance."""
    if len(points) < 2:
        return 0.0
    dist, _ = SpatialIndex(points).knn_all(2)
    return float(np.median(dist[:, 1]))


def density_cv(cloud: PointCloud, k: int = ADAPTIVE_K) -> float:
    """Coefficient of variation of per-region mean k-NN distance."""
    means = []
    for lab in np.unique(cloud.labels):
        idx = np.nonzero(cloud.labels == lab)[0]
        if len(idx) > k:
            dist, _ = SpatialIndex(cloud.positions[idx]).knn_all(k + 1)
            means.append(float(dist[:, 1:].mean()))
    if len(means) < 2:
        return 0.0
    means = np.array(means)
    return float(means.std() / means.mean()) if means.mean() > 0 else 0.0


def curvature_variance(cloud: PointCloud, k: int = 8) -> float:
    """Variance of the PCA surface variation lambda_min / sum(lambda)."""
    n = len(cloud)
    if n <= k:
        return 0.0
    _, idx = SpatialIndex(cloud.positions).knn_all(k + 1)
    nb = cloud.positions[idx]
    nb = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", nb, nb)
    lam = np.linalg.eigvalsh(cov)
    tot = lam.sum(axis=1)
    var = np.divide(lam[:, 0], tot, out=np.zeros(n), where=tot > 0)
    return float(var.var())


def select_mesh_algorithm(depth: DepthMap, cloud: PointCloud, config: SelectorConfig | None = None) -> MeshAlgoChoice:
    """Pick a meshing algorithm from scene analysis.

    Rules, first match wins:
    1. boundary fraction above ``boundary_fraction`` -> ``grid`` cut at the
       boundary gradient threshold, no smoothing (keeps sharp edges);
    2. density CV across label regions above ``density_cv`` -> ``bpa_adaptive``;
    3. fully valid depth grid -> ``grid``;
    4. otherwise -> ``delaunay25`` followed by MLS smoothing.
    """
    cfg = config or SelectorConfig()
    stats = depth_stats(depth)
    grad = depth_gradients(depth)
    mag = grad.magnitude[grad.valid]
    thr = boundary_threshold(mag)
    bfrac = float(np.mean(mag > thr)) if mag.size and thr > 0 else 0.0
    cv = density_cv(cloud)
    spacing = median_spacing(cloud.positions)
    depth_range = 0.0 if stats.valid_fraction == 0 else float(stats.max - stats.min)
    rationale = {
        "boundary_fraction": bfrac,
        "boundary_threshold": thr,
        "curvature_variance": curvature_variance(cloud),
        "density_cv": cv,
        "depth_range": depth_range,
        "median_spacing": spacing,
        "valid_fraction": float(stats.valid_fraction),
        "thresholds": {"density_cv": cfg.density_cv, "boundary_fraction": cfg.boundary_fraction},
    }
    if bfrac > cfg.boundary_fraction:
        jump = max(thr, 1e-9 * max(depth_range, 1.0))
        params = MeshingParams("grid", max_edge_jump=jump, smooth=False)
        rationale["rule"] = "sharp depth edges: grid mesh cut at discontinuities, no smoothing"
    elif cv > cfg.density_cv:
        params = MeshingParams("bpa_adaptive", radii="adaptive")
        rationale["rule"] = "varying point density favours per-region ball radii"
    elif stats.valid_fraction == 1.0:
        jump = depth_range / 2.0 if depth_range > 0 else None
        params = MeshingParams("grid", max_edge_jump=jump)
        rationale["rule"] = "complete depth grid with few edges"
    else:
        params = MeshingParams(
            "delaunay25", smooth=spacing > 0, mls_radius=cfg.mls_radius_factor * spacing or None, mls_degree=2
        )
        rationale["rule"] = "smooth incomplete scene: Delaunay with MLS smoothing (stands in for Poisson)"
    fallbacks = [a for a in FALLBACK_ORDER if a != params.algorithm]
    return MeshAlgoChoice(params.algorithm, _finite(rationale), params, fallbacks)


def _finite(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, float) and not math.isfinite(v):
            v = None
        out[k] = v
    return out


def default_params(algorithm: str, depth: DepthMap | None, cloud: PointCloud, cfg: SelectorConfig | None = None) -> MeshingParams:
    """Reasonable parameters for an algorithm when it is tried as a fallback."""
    cfg = cfg or SelectorConfig()
    spacing = median_spacing(cloud.positions) or 1.0
    if algorithm == "grid":
        rng = 0.0
        if depth is not None and depth.valid.any():
            vals = depth.depth[depth.valid]
            rng = float(vals.max() - vals.min())
        return MeshingParams("grid", max_edge_jump=rng / 2.0 if rng > 0 else None)
    if algorithm == "delaunay25":
        return MeshingParams("delaunay25")
    if algorithm == "alpha":
        return MeshingParams("alpha", alpha=cfg.alpha_factor * spacing)
    if algorithm == "bpa":
        return MeshingParams("bpa", radii=[cfg.bpa_radius_factor * spacing])
    return MeshingParams("bpa_adaptive", radii="adaptive")


def run_meshing(params: MeshingParams, depth: DepthMap | None, cloud: PointCloud) -> TriangleMesh:
    """Build a mesh with the given parameters.

    ``grid`` meshes the depth map with the cloud's camera; the others mesh the
    cloud, optionally MLS-smoothed first.
    """
    src = cloud
    if params.smooth:
        src = mls_smooth(cloud, params.mls_radius, params.mls_degree)
    if params.algorithm == "grid":
        if depth is None or cloud.intrinsics is None:
            raise ValueError("grid meshing needs the depth map and intrinsics")
        mesh = grid_mesh(depth, cloud.intrinsics, cloud.extrinsics, params.max_edge_jump)
        if params.smooth and len(mesh.vertices) == len(src):
            mesh = TriangleMesh(src.positions, mesh.faces, diagnostics=mesh.diagnostics)
        return mesh
    if params.algorithm == "delaunay25":
        return delaunay_2_5d(src)
    if params.algorithm == "alpha":
        return alpha_shape(src, params.alpha)
    return ball_pivot(src, params.radii if params.algorithm == "bpa" else "adaptive")
