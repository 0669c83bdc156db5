"""Quantitative mesh checks and the validate-then-regenerate loop."""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from d2s._parallel import map_ordered
from d2s.depth_core import CameraExtrinsics, CameraIntrinsics, DepthMap
from d2s.mesh import TriangleMesh, canonical_face
from d2s.meshing.select import MeshAlgoChoice, default_params, median_spacing, run_meshing
from d2s.pointcloud import PointCloud, SpatialIndex, world_to_camera

logger = logging.getLogger(__name__)

EDGE_BINS = 32
DEGENERATE_REL_AREA = 1e-12
MAX_ATTEMPTS = 3
LEAF_SIZE = 16
CHUNK = 512


class MeshTopologyError(ValueError):
    """Raised when an operation needs a closed, consistently oriented mesh."""


class EmptyInputError(ValueError):
    pass


# ---------------------------------------------------------------- distances


def closest_points_on_triangles(p, a, b, c) -> np.ndarray:
    """Closest point to ``p`` on each triangle (a[i], b[i], c[i]) by Voronoi region."""
    p = np.asarray(p, dtype=np.float64)
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        out = a + ab * (vb / denom)[:, None] + ac * (vc / denom)[:, None]
        done = np.zeros(len(a), dtype=bool)

        def put(mask, value):
            nonlocal done
            m = mask & ~done
            out[m] = value[m]
            done |= m

        put((d1 <= 0) & (d2 <= 0), a)
        put((d3 >= 0) & (d4 <= d3), b)
        put((d6 >= 0) & (d5 <= d6), c)
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + ab * (d1 / (d1 - d3))[:, None])
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + ac * (d2 / (d2 - d6))[:, None])
        e43, e56 = d4 - d3, d5 - d6
        put((va <= 0) & (e43 >= 0) & (e56 >= 0), b + (c - b) * (e43 / (e43 + e56))[:, None])

    bad = ~np.isfinite(out).all(axis=1)
    if bad.any():
        # zero-area faces: nearest point over the three edges
        best = None
        for s, t in ((a, b), (b, c), (c, a)):
            q = _closest_on_segments(p, s[bad], t[bad])
            if best is None:
                best = q
            else:
                closer = np.linalg.norm(q - p, axis=1) < np.linalg.norm(best - p, axis=1)
                best[closer] = q[closer]
        out[bad] = best
    return out


def _closest_on_segments(p, s, t):
    d = t - s
    dd = np.einsum("ij,ij->i", d, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(dd > 0, np.einsum("ij,ij->i", p - s, d) / dd, 0.0)
    return s + d * np.clip(u, 0.0, 1.0)[:, None]


class TriangleBVH:
    """Axis-aligned bounding-box tree over mesh faces for nearest-face queries."""

    def __init__(self, mesh: TriangleMesh):
        if mesh.is_empty():
            raise EmptyInputError("mesh has no faces")
        tri = mesh.triangles()
        self.a, self.b, self.c = tri[:, 0].copy(), tri[:, 1].copy(), tri[:, 2].copy()
        lo, hi = tri.min(axis=1), tri.max(axis=1)
        centroid = tri.mean(axis=1)
        self.lo: list[np.ndarray] = []
        self.hi: list[np.ndarray] = []
        self.children: list[tuple[int, int] | None] = []
        self.leaf_faces: list[np.ndarray | None] = []
        self._build(np.arange(len(tri)), lo, hi, centroid)
        self.box_lo = np.array(self.lo)
        self.box_hi = np.array(self.hi)
        ref = mesh.referenced_vertices()
        self.vertex_index = SpatialIndex(mesh.vertices[ref])

    def _build(self, ids, lo, hi, centroid) -> int:
        node = len(self.lo)
        self.lo.append(lo[ids].min(axis=0))
        self.hi.append(hi[ids].max(axis=0))
        self.children.append(None)
        self.leaf_faces.append(None)
        if len(ids) <= LEAF_SIZE:
            self.leaf_faces[node] = ids
            return node
        spread = centroid[ids].max(axis=0) - centroid[ids].min(axis=0)
        axis = int(np.argmax(spread))
        order = ids[np.argsort(centroid[ids, axis], kind="stable")]
        half = len(order) // 2
        left = self._build(order[:half], lo, hi, centroid)
        right = self._build(order[half:], lo, hi, centroid)
        self.children[node] = (left, right)
        return node

    def nearest_many(self, pts: np.ndarray) -> np.ndarray:
        # any referenced vertex bounds the answer from above
        upper = self.vertex_index.nearest_distance(pts) ** 2
        lo = self.box_lo.tolist()
        hi = self.box_hi.tolist()
        children, leaves = self.children, self.leaf_faces
        a, b, c = self.a, self.b, self.c
        out = np.empty(len(pts))
        for qi, p in enumerate(pts):
            px, py, pz = float(p[0]), float(p[1]), float(p[2])
            best = float(upper[qi])
            stack = [0]
            while stack:
                node = stack.pop()
                l, h = lo[node], hi[node]
                dx = l[0] - px if px < l[0] else (px - h[0] if px > h[0] else 0.0)
                dy = l[1] - py if py < l[1] else (py - h[1] if py > h[1] else 0.0)
                dz = l[2] - pz if pz < l[2] else (pz - h[2] if pz > h[2] else 0.0)
                if dx * dx + dy * dy + dz * dz > best:
                    continue
                faces = leaves[node]
                if faces is not None:
                    q = closest_points_on_triangles(p, a[faces], b[faces], c[faces]) - p
                    best = min(best, float(np.min(np.einsum("ij,ij->i", q, q))))
                else:
                    stack.extend(children[node])
            out[qi] = math.sqrt(best)
        return out

    def nearest(self, p) -> float:
        return float(self.nearest_many(np.asarray(p, dtype=np.float64).reshape(1, 3))[0])


@dataclass(frozen=True)
class DistanceStats:
    min: float
    mean: float
    max: float
    rms: float
    count: int

    def to_dict(self) -> dict:
        return asdict(self)


def point_distances(points, mesh: TriangleMesh, bvh: TriangleBVH | None = None) -> np.ndarray:
    """Exact distance from each point to the nearest face of ``mesh``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    bvh = bvh or TriangleBVH(mesh)
    chunks = [pts[i : i + CHUNK] for i in range(0, len(pts), CHUNK)]
    parts = map_ordered(bvh.nearest_many, chunks)
    return np.concatenate(parts) if parts else np.zeros(0)


def _stats(d: np.ndarray) -> DistanceStats:
    return DistanceStats(
        min=float(d.min()), mean=float(d.mean()), max=float(d.max()), rms=float(np.sqrt(np.mean(d * d))), count=len(d)
    )


def point_to_surface(points, mesh: TriangleMesh) -> DistanceStats:
    """min/mean/max/RMS of exact point-to-mesh distances."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyInputError("no query points")
    return _stats(point_distances(pts, mesh))


def sample_surface(mesh: TriangleMesh, density: float, seed: int = 0) -> np.ndarray:
    """Referenced vertices plus ceil(density * area) uniform samples per face."""
    if density < 0:
        raise ValueError("density must be >= 0")
    verts = mesh.vertices[mesh.referenced_vertices()]
    if density == 0 or mesh.is_empty():
        return verts
    rng = np.random.default_rng(seed)
    counts = np.ceil(density * mesh.face_areas()).astype(np.int64)
    face_of = np.repeat(np.arange(mesh.n_faces), counts)
    r1 = np.sqrt(rng.random(len(face_of)))
    r2 = rng.random(len(face_of))
    tri = mesh.triangles()[face_of]
    pts = (
        (1 - r1)[:, None] * tri[:, 0]
        + (r1 * (1 - r2))[:, None] * tri[:, 1]
        + (r1 * r2)[:, None] * tri[:, 2]
    )
    return np.vstack([verts, pts])


@dataclass(frozen=True)
class HausdorffResult:
    symmetric: float
    a_to_b: float
    b_to_a: float
    density: float
    samples: int
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def hausdorff(points, mesh: TriangleMesh, density: float = 0.0, seed: int = 0) -> HausdorffResult:
    """Symmetric Hausdorff estimate between a point set and a mesh.

    Points to mesh is exact. Mesh to points uses surface samples at
    ``density`` per unit area (0 samples the referenced vertices only)
    against the points' nearest-neighbour index.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0 or mesh.is_empty():
        raise EmptyInputError("hausdorff needs points and a non-empty mesh")
    ab = float(point_distances(pts, mesh).max())
    samples = sample_surface(mesh, density, seed)
    ba = float(np.max(SpatialIndex(pts).nearest_distance(samples)))
    return HausdorffResult(max(ab, ba), ab, ba, float(density), len(samples), seed)


def mesh_deviation(mesh_a: TriangleMesh, mesh_b: TriangleMesh, density: float = 0.0, seed: int = 0) -> HausdorffResult:
    """Symmetric surface deviation between meshes using exact point-to-surface both ways."""
    sa = sample_surface(mesh_a, density, seed)
    sb = sample_surface(mesh_b, density, seed)
    ab = float(point_distances(sa, mesh_b).max())
    ba = float(point_distances(sb, mesh_a).max())
    return HausdorffResult(max(ab, ba), ab, ba, float(density), len(sa) + len(sb), seed)


# ---------------------------------------------------------------- edges and quality


@dataclass(frozen=True)
class EdgeLengthStats:
    min: float
    max: float
    mean: float
    stddev: float
    histogram: list
    bin_edges: list
    outlier_fraction: float
    count: int

    def to_dict(self) -> dict:
        return asdict(self)


def edge_lengths(mesh: TriangleMesh) -> np.ndarray:
    e = mesh.unique_edges()
    return np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)


def edge_length_stats(mesh: TriangleMesh) -> EdgeLengthStats:
    if mesh.is_empty():
        raise EmptyInputError("mesh has no faces")
    lengths = edge_lengths(mesh)
    mean, std = float(lengths.mean()), float(lengths.std())
    lo, hi = float(lengths.min()), float(lengths.max())
    hist, edges = np.histogram(lengths, bins=EDGE_BINS, range=(lo, hi) if hi > lo else (lo - 0.5, lo + 0.5))
    outliers = np.abs(lengths - mean) > 3.0 * std
    return EdgeLengthStats(
        min=lo,
        max=hi,
        mean=min(max(mean, lo), hi),
        stddev=std,
        histogram=hist.tolist(),
        bin_edges=edges.tolist(),
        outlier_fraction=float(outliers.mean()),
        count=len(lengths),
    )


@dataclass(frozen=True)
class MeshQualityMetrics:
    min_angle_deg: float
    mean_min_angle_deg: float
    max_aspect_ratio: float
    degenerate_count: int

    def to_dict(self) -> dict:
        return asdict(self)


def bbox_diagonal(mesh: TriangleMesh) -> float:
    v = mesh.vertices[mesh.referenced_vertices()] if mesh.n_faces else mesh.vertices
    if len(v) == 0:
        return 0.0
    return float(np.linalg.norm(v.max(axis=0) - v.min(axis=0)))


def degenerate_mask(mesh: TriangleMesh) -> np.ndarray:
    return mesh.face_areas() < DEGENERATE_REL_AREA * bbox_diagonal(mesh) ** 2


def triangle_quality(mesh: TriangleMesh) -> MeshQualityMetrics:
    """Angle and aspect-ratio statistics; degenerate faces are counted and excluded."""
    if mesh.is_empty():
        return MeshQualityMetrics(0.0, 0.0, 1.0, 0)
    degenerate = degenerate_mask(mesh)
    tri = mesh.triangles()[~degenerate]
    if len(tri) == 0:
        return MeshQualityMetrics(0.0, 0.0, 1.0, int(degenerate.sum()))
    a = np.linalg.norm(tri[:, 1] - tri[:, 2], axis=1)
    b = np.linalg.norm(tri[:, 2] - tri[:, 0], axis=1)
    c = np.linalg.norm(tri[:, 0] - tri[:, 1], axis=1)

    def angle(opp, s1, s2):
        return np.degrees(np.arccos(np.clip((s1 * s1 + s2 * s2 - opp * opp) / (2 * s1 * s2), -1.0, 1.0)))

    angles = np.stack([angle(a, b, c), angle(b, c, a), angle(c, a, b)], axis=1)
    min_angles = np.minimum(angles.min(axis=1), 60.0)
    s = 0.5 * (a + b + c)
    area = np.sqrt(np.maximum(s * (s - a) * (s - b) * (s - c), 0.0))
    inradius = area / s
    longest = np.maximum(np.maximum(a, b), c)
    with np.errstate(divide="ignore"):
        aspect = np.maximum(longest / (2.0 * math.sqrt(3.0) * inradius), 1.0)
    return MeshQualityMetrics(
        min_angle_deg=float(min_angles.min()),
        mean_min_angle_deg=float(min_angles.mean()),
        max_aspect_ratio=float(aspect.max()),
        degenerate_count=int(degenerate.sum()),
    )


# ---------------------------------------------------------------- topology and volume


@dataclass(frozen=True)
class TopologyReport:
    edge_manifold: bool
    watertight: bool
    consistent_orientation: bool
    boundary_edges: int
    nonmanifold_edges: int
    duplicate_faces: int
    degenerate_faces: int

    def to_dict(self) -> dict:
        return asdict(self)


def topology_check(mesh: TriangleMesh) -> TopologyReport:
    f = mesh.faces
    directed = Counter()
    for a, b, c in f.tolist():
        directed[(a, b)] += 1
        directed[(b, c)] += 1
        directed[(c, a)] += 1
    undirected = Counter()
    for (u, v), n in directed.items():
        undirected[(min(u, v), max(u, v))] += n
    consistent = all(n == 1 for n in directed.values())
    boundary = sum(1 for n in undirected.values() if n == 1)
    nonmanifold = sum(1 for n in undirected.values() if n > 2)
    canon = Counter(canonical_face(x) for x in f.tolist())
    dup = sum(n - 1 for n in canon.values())
    degenerate = int(degenerate_mask(mesh).sum()) if len(f) else 0
    return TopologyReport(
        edge_manifold=nonmanifold == 0,
        watertight=bool(len(f)) and boundary == 0 and nonmanifold == 0 and consistent,
        consistent_orientation=consistent,
        boundary_edges=boundary,
        nonmanifold_edges=nonmanifold,
        duplicate_faces=dup,
        degenerate_faces=degenerate,
    )


def enclosed_volume(mesh: TriangleMesh) -> float:
    """Signed volume of a watertight mesh; positive for outward winding."""
    if not topology_check(mesh).watertight:
        raise MeshTopologyError("enclosed_volume needs a watertight, consistently oriented mesh")
    t = mesh.triangles()
    return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)


def reference_volume(
    depth: DepthMap, intr: CameraIntrinsics, base_depth: float, mask=None, rule: str = "frustum"
) -> float:
    """Volume between the depth surface and the back plane at ``base_depth``.

    ``rule="frustum"`` integrates each pixel's viewing pyramid exactly,
    (B^3 - d^3) / (3 fx fy). ``rule="footprint"`` uses the one-point
    estimate (B - d) * d^2 / (fx fy), which is biased low when B - d is not
    small next to d.
    """
    sel = depth.valid if mask is None else depth.valid & np.asarray(mask, dtype=bool)
    d = depth.depth[sel]
    if d.size and d.max() > base_depth:
        raise ValueError("base_depth lies in front of some depth sample")
    if rule == "frustum":
        return float(np.sum(base_depth**3 - d**3) / (3.0 * intr.fx * intr.fy))
    if rule == "footprint":
        return float(np.sum((base_depth - d) * d * d) / (intr.fx * intr.fy))
    raise ValueError(f"unknown rule {rule!r}")


def closed_volume(mesh: TriangleMesh, base_depth: float, extr: CameraExtrinsics | None = None) -> float:
    """Volume between an open camera-facing mesh and the back plane z = base_depth.

    Each face is closed by the viewing rays through its corners: the solid is
    the pyramid from the camera centre to the face's central projection on
    the back plane minus the pyramid to the face itself. This is the same
    region :func:`reference_volume` integrates per pixel.
    """
    extr = extr or CameraExtrinsics()
    if mesh.is_empty():
        return 0.0
    p = world_to_camera(mesh.vertices, extr)[mesh.faces]
    if np.any(p[:, :, 2] <= 0) or np.any(p[:, :, 2] > base_depth):
        raise ValueError("mesh must lie between the camera and the back plane")
    q = p * (base_depth / p[:, :, 2])[:, :, None]

    def det(t):
        return np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2]))

    return float((det(p) - det(q)).sum() / 6.0)


# ---------------------------------------------------------------- validate and regenerate


@dataclass(frozen=True)
class ValidationThresholds:
    rms_spacing_factor: float = 2.0
    max_outlier_fraction: float = 0.05
    max_degenerate: int = 0
    min_coverage: float = 0.9
    max_attempts: int = MAX_ATTEMPTS

    @classmethod
    def from_dict(cls, d: dict | None) -> "ValidationThresholds":
        return cls(**(d or {}))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ValidationReport:
    metrics: dict
    overall: bool
    attempts: list = field(default_factory=list)
    selected_attempt: int = 0

    def to_dict(self) -> dict:
        return {
            "metrics": self.metrics,
            "overall": self.overall,
            "attempts": self.attempts,
            "selected_attempt": self.selected_attempt,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def coverage(mesh: TriangleMesh, cloud: PointCloud) -> float:
    """Fraction of cloud points that coincide with a vertex used by some face."""
    if mesh.is_empty() or len(cloud) == 0:
        return 0.0
    ref = mesh.vertices[mesh.referenced_vertices()]
    lo, hi = cloud.bounds
    tol = 1e-6 * max(float(np.linalg.norm(hi - lo)), 1.0)
    d = SpatialIndex(ref).nearest_distance(cloud.positions)
    return float(np.mean(d <= tol))


def _finite(x: float):
    return float(x) if math.isfinite(x) else None


def evaluate_mesh(mesh: TriangleMesh, cloud: PointCloud, thresholds: ValidationThresholds) -> dict:
    """Per-metric value, threshold and pass flag."""
    spacing = median_spacing(cloud.positions)
    if mesh.is_empty():
        rms, outliers, quality = math.inf, 1.0, MeshQualityMetrics(0.0, 0.0, 1.0, 0)
    else:
        rms = point_to_surface(cloud.positions, mesh).rms
        outliers = edge_length_stats(mesh).outlier_fraction
        quality = triangle_quality(mesh)
    cov = coverage(mesh, cloud)
    rms_limit = thresholds.rms_spacing_factor * spacing
    rows = {
        "rms_point_to_surface": (rms, rms_limit, rms <= rms_limit),
        "edge_outlier_fraction": (outliers, thresholds.max_outlier_fraction, outliers <= thresholds.max_outlier_fraction),
        "degenerate_count": (quality.degenerate_count, thresholds.max_degenerate, quality.degenerate_count <= thresholds.max_degenerate),
        "coverage": (cov, thresholds.min_coverage, cov >= thresholds.min_coverage),
    }
    return {
        k: {"value": _finite(v) if isinstance(v, float) else v, "threshold": t, "passed": bool(ok)}
        for k, (v, t, ok) in rows.items()
    }


def validate_and_regenerate(
    depth: DepthMap | None,
    cloud: PointCloud,
    choice: MeshAlgoChoice,
    thresholds: ValidationThresholds | None = None,
) -> tuple[TriangleMesh, ValidationReport]:
    """Mesh with the chosen algorithm, validate, and retry fallbacks on failure.

    Attempts run in selector order (chosen, then ``choice.fallbacks``) up to
    ``max_attempts``. The first passing mesh is returned; otherwise the best
    attempt by (metrics passed, -RMS) together with the failing report.
    """
    thresholds = thresholds or ValidationThresholds()
    plan = [choice.params] + [default_params(a, depth, cloud) for a in choice.fallbacks]
    attempts, results = [], []
    for params in plan[: thresholds.max_attempts]:
        try:
            mesh = run_meshing(params, depth, cloud)
            error = None
        except ValueError as exc:
            mesh, error = TriangleMesh(cloud.positions, np.zeros((0, 3), dtype=np.int64)), str(exc)
        metrics = evaluate_mesh(mesh, cloud, thresholds)
        passed = all(m["passed"] for m in metrics.values())
        entry = {"algorithm": params.algorithm, "params": params.to_dict(), "passed": passed, "metrics": metrics}
        if error:
            entry["error"] = error
        attempts.append(entry)
        results.append((mesh, metrics, passed))
        logger.info("meshing attempt %d (%s): %s", len(attempts), params.algorithm, "pass" if passed else "fail")
        if passed:
            break

    def score(i):
        metrics = results[i][1]
        rms = metrics["rms_point_to_surface"]["value"]
        return (sum(m["passed"] for m in metrics.values()), -(rms if rms is not None else math.inf), -i)

    best = max(range(len(results)), key=score)
    mesh, metrics, passed = results[best]
    return mesh, ValidationReport(metrics=metrics, overall=passed, attempts=attempts, selected_attempt=best)
