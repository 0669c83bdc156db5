"""Depth-grid meshing, 2.5D Delaunay and alpha shapes."""

from __future__ import annotations

import numpy as np

from d2s.depth_core import CameraExtrinsics, CameraIntrinsics, DepthMap
from d2s.mesh import TriangleMesh
from d2s.meshing.delaunay import DelaunayError, delaunay_triangles
from d2s.pointcloud import PointCloud, unproject_pixels


def grid_mesh(
    depth: DepthMap,
    intr: CameraIntrinsics,
    extr: CameraExtrinsics | None = None,
    max_edge_jump: float | None = None,
    labels=None,
) -> TriangleMesh:
    """Two triangles per fully valid 2x2 pixel block.

    Vertices are the unprojected valid pixels in row-major order (the same
    order :func:`d2s.pointcloud.unproject` uses). Each block is split along
    its shorter 3D diagonal; a triangle whose corner depths span more than
    ``max_edge_jump`` is dropped.
    """
    extr = extr or CameraExtrinsics()
    h, w = depth.shape
    valid = depth.valid
    cells = valid[:-1, :-1] & valid[1:, :-1] & valid[:-1, 1:] & valid[1:, 1:]
    if not cells.any():
        raise ValueError("depth map has no fully valid 2x2 cell")
    vid = np.full((h, w), -1, dtype=np.int64)
    vv, uu = np.nonzero(valid)
    vid[vv, uu] = np.arange(len(vv))
    verts = unproject_pixels(uu, vv, depth.depth[vv, uu], intr, extr)

    cy, cx = np.nonzero(cells)
    p00 = vid[cy, cx]
    p10 = vid[cy, cx + 1]
    p01 = vid[cy + 1, cx]
    p11 = vid[cy + 1, cx + 1]
    main = np.linalg.norm(verts[p00] - verts[p11], axis=1)
    anti = np.linalg.norm(verts[p10] - verts[p01], axis=1)
    use_main = main <= anti
    # winding faces the camera: (u,v) -> (u,v+1) -> (u+1,v) is counter-clockwise as seen from it
    t1 = np.where(use_main[:, None], np.stack([p00, p01, p11], 1), np.stack([p00, p01, p10], 1))
    t2 = np.where(use_main[:, None], np.stack([p00, p11, p10], 1), np.stack([p10, p01, p11], 1))
    faces = np.stack([t1, t2], axis=1).reshape(-1, 3)
    t = verts[faces]
    area2 = np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)
    degenerate = int((area2 == 0).sum())
    faces = faces[area2 > 0]
    dropped = 0
    if max_edge_jump is not None:
        d = depth.depth[vv, uu][faces]
        keep = (d.max(axis=1) - d.min(axis=1)) <= max_edge_jump
        dropped = int((~keep).sum())
        faces = faces[keep]
    lab = None
    if labels is not None:
        lab = np.asarray(getattr(labels, "labels", labels))[vv, uu]
    return TriangleMesh(verts, faces, labels=lab, diagnostics={"dropped_jump": dropped, "dropped_degenerate": degenerate})


def _faces_toward_camera(faces: np.ndarray, cloud: PointCloud) -> np.ndarray:
    # faces arrive counter-clockwise in world (x, y); that is clockwise for a
    # viewer looking down +z, so flip when the optical axis points along +z
    axis = cloud.extrinsics.rotation.T @ np.array([0.0, 0.0, 1.0])
    return faces[:, ::-1].copy() if axis[2] > 0 else faces


def delaunay_2_5d(cloud: PointCloud) -> TriangleMesh:
    """Delaunay triangulation of the (x, y) projection, lifted to the 3D points."""
    if len(cloud) < 3:
        raise DelaunayError("need at least 3 points")
    faces, diag = delaunay_triangles(cloud.positions[:, :2])
    faces = _faces_toward_camera(faces, cloud)
    return TriangleMesh(cloud.positions, faces, normals=cloud.normals, labels=cloud.labels, diagnostics=diag)


def xy_circumradii(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    t = vertices[faces][:, :, :2]
    a = np.linalg.norm(t[:, 1] - t[:, 2], axis=1)
    b = np.linalg.norm(t[:, 2] - t[:, 0], axis=1)
    c = np.linalg.norm(t[:, 0] - t[:, 1], axis=1)
    cross = np.abs(
        (t[:, 1, 0] - t[:, 0, 0]) * (t[:, 2, 1] - t[:, 0, 1]) - (t[:, 1, 1] - t[:, 0, 1]) * (t[:, 2, 0] - t[:, 0, 0])
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(cross > 0, a * b * c / (2.0 * cross), np.inf)


def xy_diameter(points: np.ndarray) -> float:
    xy = np.asarray(points)[:, :2]
    # diameter is attained between convex hull vertices; brute force is fine at this scale
    if len(xy) > 2000:
        from scipy.spatial import ConvexHull

        xy = xy[ConvexHull(xy).vertices]
    diff = xy[:, None, :] - xy[None, :, :]
    return float(np.sqrt((diff**2).sum(-1)).max())


def alpha_shape(cloud: PointCloud, alpha: float, delaunay: TriangleMesh | None = None) -> TriangleMesh:
    """Delaunay triangles whose (x, y) circumradius is at most ``alpha``.

    ``alpha`` at or above the point-set diameter is treated as infinite and
    keeps every Delaunay triangle.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    dt = delaunay if delaunay is not None else delaunay_2_5d(cloud)
    if alpha >= xy_diameter(cloud.positions):
        keep = np.ones(len(dt.faces), dtype=bool)
    else:
        keep = xy_circumradii(dt.vertices, dt.faces) <= alpha
    return TriangleMesh(
        dt.vertices, dt.faces[keep], normals=dt.normals, labels=dt.labels, diagnostics={"alpha": alpha}
    )
