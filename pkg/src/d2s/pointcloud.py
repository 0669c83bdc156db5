"""Depth unprojection, point clouds, normals, spatial queries and PLY files."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from d2s.depth_core import CameraExtrinsics, CameraIntrinsics, DepthMap

logger = logging.getLogger(__name__)

PLY_PROPS = ("x", "y", "z", "nx", "ny", "nz", "label", "u", "v")


class PlyFormatError(ValueError):
    pass


@dataclass(frozen=True)
class PointCloud:
    """Ordered 3D points with optional normals, region labels and source pixels.

    Attributes:
        positions: (N, 3) world coordinates.
        normals: (N, 3) unit normals; rows of NaN mark unset normals.
        labels: (N,) region ids (0 when unlabeled).
        pixels: (N, 2) integer (u, v) source pixels.
    """

    positions: np.ndarray
    normals: np.ndarray | None = None
    labels: np.ndarray | None = None
    pixels: np.ndarray | None = None
    intrinsics: CameraIntrinsics | None = None
    extrinsics: CameraExtrinsics = field(default_factory=CameraExtrinsics)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(pos)
        normals = (
            np.full((n, 3), np.nan)
            if self.normals is None
            else np.asarray(self.normals, dtype=np.float64).reshape(n, 3)
        )
        labels = np.zeros(n, np.int64) if self.labels is None else np.asarray(self.labels, np.int64).reshape(n)
        pixels = (
            np.full((n, 2), -1, np.int64)
            if self.pixels is None
            else np.asarray(self.pixels, np.int64).reshape(n, 2)
        )
        for name, arr in (("positions", pos), ("normals", normals), ("labels", labels), ("pixels", pixels)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.positions)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self) == 0:
            return np.full(3, np.nan), np.full(3, np.nan)
        return self.positions.min(axis=0), self.positions.max(axis=0)

    @property
    def has_normals(self) -> np.ndarray:
        return ~np.isnan(self.normals).any(axis=1)

    def subset(self, idx) -> "PointCloud":
        idx = np.asarray(idx)
        return replace(
            self,
            positions=self.positions[idx],
            normals=self.normals[idx],
            labels=self.labels[idx],
            pixels=self.pixels[idx],
        )

    def with_positions(self, positions) -> "PointCloud":
        return replace(self, positions=positions)

    def with_normals(self, normals) -> "PointCloud":
        return replace(self, normals=normals)


def camera_to_world(p_cam: np.ndarray, extr: CameraExtrinsics) -> np.ndarray:
    return (np.asarray(p_cam) - extr.translation) @ extr.rotation


def world_to_camera(p_world: np.ndarray, extr: CameraExtrinsics) -> np.ndarray:
    return np.asarray(p_world) @ extr.rotation.T + extr.translation


def unproject_pixels(u, v, d, intr: CameraIntrinsics, extr: CameraExtrinsics | None = None) -> np.ndarray:
    """World points for pixel coordinates and z-depths (vectorized)."""
    u, v, d = (np.asarray(a, dtype=np.float64) for a in (u, v, d))
    p_cam = np.stack([(u - intr.cx) * d / intr.fx, (v - intr.cy) * d / intr.fy, d], axis=-1)
    return p_cam if extr is None else camera_to_world(p_cam, extr)


def unproject(depth: DepthMap, intr: CameraIntrinsics, extr: CameraExtrinsics | None = None, labels=None) -> PointCloud:
    """One world-space point per valid pixel, in row-major pixel order."""
    extr = extr or CameraExtrinsics()
    if labels is not None:
        lab = np.asarray(getattr(labels, "labels", labels))
        if lab.shape != depth.shape:
            raise ValueError(f"label map {lab.shape} does not match depth map {depth.shape}")
    v, u = np.nonzero(depth.valid)
    pts = unproject_pixels(u, v, depth.depth[v, u], intr, extr)
    point_labels = None if labels is None else lab[v, u]
    return PointCloud(pts, labels=point_labels, pixels=np.stack([u, v], axis=1), intrinsics=intr, extrinsics=extr)


def project(point, intr: CameraIntrinsics, extr: CameraExtrinsics | None = None) -> tuple[float, float, float]:
    """Pinhole projection of a world point to (u, v, depth)."""
    extr = extr or CameraExtrinsics()
    pc = world_to_camera(np.asarray(point, dtype=np.float64), extr)
    if not pc[2] > 0:
        raise ValueError("point lies at or behind the camera plane")
    return (
        float(intr.fx * pc[0] / pc[2] + intr.cx),
        float(intr.fy * pc[1] / pc[2] + intr.cy),
        float(pc[2]),
    )


def project_many(points, intr: CameraIntrinsics, extr: CameraExtrinsics | None = None) -> np.ndarray:
    extr = extr or CameraExtrinsics()
    pc = world_to_camera(np.asarray(points, dtype=np.float64).reshape(-1, 3), extr)
    if np.any(pc[:, 2] <= 0):
        raise ValueError("point lies at or behind the camera plane")
    return np.stack([intr.fx * pc[:, 0] / pc[:, 2] + intr.cx, intr.fy * pc[:, 1] / pc[:, 2] + intr.cy, pc[:, 2]], axis=1)


# ---------------------------------------------------------------------------
# Spatial index


class SpatialIndex:
    """Exact k-NN and radius queries over a fixed point set.

    Backed by :class:`scipy.spatial.cKDTree`; results are re-sorted so that
    equal distances resolve to the lower point id.
    """

    def __init__(self, points):
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(self.points) == 0:
            raise ValueError("cannot index an empty point set")
        self._tree = cKDTree(self.points)

    def __len__(self):
        return len(self.points)

    def knn(self, query, k: int) -> np.ndarray:
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(query, dtype=np.float64).reshape(3)
        k = min(k, len(self.points))
        dist, _ = self._tree.query(q, k=k)
        kth = float(np.atleast_1d(dist)[-1])
        # gather every point tied with the k-th distance before ordering by id
        cand = np.array(self._tree.query_ball_point(q, kth * (1 + 1e-12) + 1e-300), dtype=np.int64)
        d = np.linalg.norm(self.points[cand] - q, axis=1)
        order = np.lexsort((cand, d))
        return cand[order][:k]

    def radius(self, query, r: float) -> np.ndarray:
        if r < 0:
            raise ValueError("radius must be >= 0")
        q = np.asarray(query, dtype=np.float64).reshape(3)
        cand = np.array(self._tree.query_ball_point(q, r * (1 + 1e-12) + 1e-300), dtype=np.int64)
        if cand.size == 0:
            return cand
        d = np.linalg.norm(self.points[cand] - q, axis=1)
        cand, d = cand[d <= r], d[d <= r]
        return cand[np.lexsort((cand, d))]

    def nearest_distance(self, queries) -> np.ndarray:
        """Distance from each query to its nearest indexed point."""
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        dist, _ = self._tree.query(q)
        return np.asarray(dist, dtype=np.float64).reshape(len(q))

    def knn_all(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Distances and ids of the k nearest neighbours of every indexed point, self included."""
        k = min(k, len(self.points))
        dist, idx = self._tree.query(self.points, k=k)
        return dist.reshape(len(self.points), k), idx.reshape(len(self.points), k)


def nearest_neighbors(index: SpatialIndex, query, k: int | None = None, radius: float | None = None) -> np.ndarray:
    if radius is not None:
        return index.radius(query, radius)
    if not k:
        raise ValueError("need k >= 1 or a radius")
    return index.knn(query, k)


# ---------------------------------------------------------------------------
# Normals


def pca_normal(neigh: np.ndarray) -> np.ndarray | None:
    """Eigenvector of the smallest covariance eigenvalue, or None if degenerate."""
    centered = neigh - neigh.mean(axis=0)
    cov = centered.T @ centered
    if not np.any(cov):
        return None
    _, vecs = np.linalg.eigh(cov)
    return vecs[:, 0]


def estimate_normals(cloud: PointCloud, k: int = 8) -> PointCloud:
    """PCA normals over k nearest neighbours, oriented toward the camera."""
    if k < 3:
        raise ValueError("k must be >= 3")
    if len(cloud) < k + 1:
        raise ValueError(f"need at least {k + 1} points for k={k}")
    index = SpatialIndex(cloud.positions)
    _, nbrs = index.knn_all(k + 1)
    pos = cloud.positions
    center = cloud.extrinsics.camera_center
    normals = np.full((len(cloud), 3), np.nan)
    degenerate = 0
    for i in range(len(cloud)):
        n = pca_normal(pos[nbrs[i]])
        if n is None:
            degenerate += 1
            continue
        n = n / np.linalg.norm(n)
        if n @ (center - pos[i]) < 0:
            n = -n
        normals[i] = n
    if degenerate:
        logger.info("estimate_normals: %d degenerate neighbourhoods", degenerate)
    return cloud.with_normals(normals)


# ---------------------------------------------------------------------------
# PLY


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _camera_comments(cloud: PointCloud) -> list[str]:
    out = []
    if cloud.intrinsics is not None:
        i = cloud.intrinsics
        out.append("comment intrinsics " + " ".join(repr(float(v)) for v in (i.fx, i.fy, i.cx, i.cy)))
    e = cloud.extrinsics
    vals = [*e.rotation.ravel(), *e.translation]
    out.append("comment extrinsics " + " ".join(repr(float(v)) for v in vals))
    return out


def _camera_from_comments(lines: list[str]):
    intr = extr = None
    for line in lines:
        tok = line.split()
        if tok[:1] == ["end_header"]:
            break
        if tok[:2] == ["comment", "intrinsics"] and len(tok) == 6:
            intr = CameraIntrinsics(*map(float, tok[2:]))
        elif tok[:2] == ["comment", "extrinsics"] and len(tok) == 14:
            vals = np.array([float(t) for t in tok[2:]])
            extr = CameraExtrinsics(vals[:9].reshape(3, 3), vals[9:])
    return intr, extr


def write_ply(cloud: PointCloud, path) -> None:
    """ASCII PLY with x y z nx ny nz label u v per vertex."""
    if len(cloud) == 0:
        raise ValueError("refusing to write an empty cloud")
    lines = [
        "ply",
        "format ascii 1.0",
        *_camera_comments(cloud),
        f"element vertex {len(cloud)}",
        *(f"property float {p}" for p in ("x", "y", "z", "nx", "ny", "nz")),
        "property int label",
        "property int u",
        "property int v",
        "end_header",
    ]
    for p, n, lab, px in zip(cloud.positions, cloud.normals, cloud.labels, cloud.pixels):
        lines.append(" ".join([*map(_fmt, p), *map(_fmt, n), str(int(lab)), str(int(px[0])), str(int(px[1]))]))
    Path(path).write_text("\n".join(lines) + "\n")


def parse_ply_header(lines: list[str]) -> tuple[list[tuple[str, int, list[str]]], int, str]:
    """Parse PLY header lines into ``[(element, count, props)]``, body offset, format."""
    if not lines or lines[0].strip() != "ply":
        raise PlyFormatError("missing 'ply' magic")
    elements: list[tuple[str, int, list[str]]] = []
    fmt = None
    for i, line in enumerate(lines[1:], 1):
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1] if len(tok) > 1 else None
        elif tok[0] == "element":
            if len(tok) != 3:
                raise PlyFormatError(f"bad element line {line!r}")
            try:
                elements.append((tok[1], int(tok[2]), []))
            except ValueError as exc:
                raise PlyFormatError(f"bad element count in {line!r}") from exc
        elif tok[0] == "property":
            if not elements:
                raise PlyFormatError("property before element")
            elements[-1][2].append(tok[-1] if tok[1] != "list" else "list:" + tok[-1])
        elif tok[0] == "end_header":
            if fmt is None:
                raise PlyFormatError("missing format line")
            return elements, i + 1, fmt
        else:
            raise PlyFormatError(f"unexpected header line {line!r}")
    raise PlyFormatError("missing end_header")


def read_ply(path) -> PointCloud:
    """Read a vertex-only (or vertex-first) ASCII PLY written by :func:`write_ply`.

    Missing optional properties default to unset normals, label 0 and pixel -1.
    """
    text = Path(path).read_text()
    lines = text.splitlines()
    elements, offset, fmt = parse_ply_header(lines)
    if fmt != "ascii":
        raise PlyFormatError(f"unsupported PLY format {fmt!r}")
    if not elements or elements[0][0] != "vertex":
        raise PlyFormatError("first element must be 'vertex'")
    _, count, props = elements[0]
    body = [ln for ln in lines[offset:] if ln.strip()]
    if len(body) < count:
        raise PlyFormatError(f"header declares {count} vertices but found {len(body)} rows")
    if len(elements) == 1 and len(body) != count:
        raise PlyFormatError(f"header declares {count} vertices but found {len(body)} rows")
    try:
        data = np.array([[float(t) for t in ln.split()] for ln in body[:count]], dtype=np.float64).reshape(count, -1)
    except ValueError as exc:
        raise PlyFormatError(f"unparseable vertex row: {exc}") from exc
    if data.shape[1] != len(props):
        raise PlyFormatError("vertex row width does not match property count")
    col = {p: data[:, i] for i, p in enumerate(props)}
    for req in ("x", "y", "z"):
        if req not in col:
            raise PlyFormatError(f"missing vertex property {req!r}")
    pos = np.stack([col["x"], col["y"], col["z"]], axis=1)
    normals = np.stack([col["nx"], col["ny"], col["nz"]], axis=1) if "nx" in col else None
    labels = col["label"].astype(np.int64) if "label" in col else None
    pixels = np.stack([col["u"], col["v"]], axis=1).astype(np.int64) if "u" in col else None
    intr, extr = _camera_from_comments(lines)
    return PointCloud(pos, normals, labels, pixels, intr, extr or CameraExtrinsics())
