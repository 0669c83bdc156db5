"""Ball-pivoting surface reconstruction with fixed or per-region radii.

A triangle is emitted only when a ball of the current radius touches its
three corners, sits on the side its vertex normals point to, and contains
no other cloud point. Fronts are pivoted in FIFO order, seeds are scanned by
ascending vertex index and pivot candidates by (angle, index).
"""

from __future__ import annotations

import logging
import math
from collections import deque

import numpy as np

from d2s.mesh import TriangleMesh
from d2s.pointcloud import PointCloud, SpatialIndex

logger = logging.getLogger(__name__)

ADAPTIVE_FACTOR = 1.3
ADAPTIVE_K = 5
# relative slack for points lying exactly on a ball (cocircular grids)
BALL_TOL = 1e-9


def circumcenter(a, b, c):
    """Circumcenter and circumradius of a 3D triangle; None when degenerate."""
    ab, ac = b - a, c - a
    n = np.cross(ab, ac)
    nn = n @ n
    if nn <= 1e-30 * max(ab @ ab, ac @ ac) ** 2 or nn == 0:
        return None
    center = a + (np.cross(n, ab) * (ac @ ac) + np.cross(ac, n) * (ab @ ab)) / (2.0 * nn)
    return center, float(np.linalg.norm(center - a)), n / math.sqrt(nn)


def ball_center(pa, pb, pc, r):
    """Center of the radius-r ball through the corners on the face-normal side."""
    cc = circumcenter(pa, pb, pc)
    if cc is None:
        return None
    center, rho, n = cc
    if rho > r:
        return None
    return center + math.sqrt(max(r * r - rho * rho, 0.0)) * n, n


def region_radii(cloud: PointCloud, k: int = ADAPTIVE_K, factor: float = ADAPTIVE_FACTOR) -> dict[int, float]:
    """Per-label ball radius: ``factor`` times the mean k-NN spacing inside the label."""
    pos = cloud.positions
    out = {}
    global_r = None
    for lab in np.unique(cloud.labels):
        idx = np.nonzero(cloud.labels == lab)[0]
        if len(idx) > k:
            dist, _ = SpatialIndex(pos[idx]).knn_all(k + 1)
            out[int(lab)] = factor * float(dist[:, 1:].mean())
        else:
            if global_r is None:
                dist, _ = SpatialIndex(pos).knn_all(min(k + 1, len(pos)))
                global_r = factor * float(dist[:, 1:].mean())
            out[int(lab)] = global_r
    return out


class _Pivoter:
    def __init__(self, cloud: PointCloud):
        self.pos = cloud.positions
        self.nrm = cloud.normals
        self.index = SpatialIndex(self.pos)
        self.faces: list[tuple[int, int, int]] = []
        self.face_radius: list[float] = []
        self.face_set: set[tuple[int, int, int]] = set()
        # undirected edge -> list of directed edges present in faces
        self.edge_faces: dict[tuple[int, int], list[tuple[int, int]]] = {}
        # directed boundary edge -> opposite vertex of its single face
        self.front: dict[tuple[int, int], int] = {}
        self.used = np.zeros(len(self.pos), dtype=bool)
        self.front_degree = np.zeros(len(self.pos), dtype=np.int64)
        self.seeds = 0

    def _normals_agree(self, n, ids) -> bool:
        return all(n @ self.nrm[i] > 0 for i in ids)

    def _empty(self, center, r, ids) -> bool:
        inside = self.index.radius(center, r * (1.0 - BALL_TOL))
        return all(int(i) in ids for i in inside)

    def _edge_ok(self, u, v) -> bool:
        """Can a new face contain directed edge u -> v without breaking manifoldness?"""
        existing = self.edge_faces.get((min(u, v), max(u, v)), [])
        if len(existing) >= 2:
            return False
        return not existing or existing[0] == (v, u)

    def _internal(self, m) -> bool:
        return bool(self.used[m]) and self.front_degree[m] == 0

    def _emit(self, a, b, c, r) -> list[tuple[int, int]]:
        key = _canon(a, b, c)
        self.face_set.add(key)
        self.faces.append((a, b, c))
        self.face_radius.append(r)
        self.used[[a, b, c]] = True
        new_front = []
        for u, v, opp in ((a, b, c), (b, c, a), (c, a, b)):
            self.edge_faces.setdefault((min(u, v), max(u, v)), []).append((u, v))
            if (v, u) in self.front:
                del self.front[(v, u)]
                self.front_degree[[u, v]] -= 1
            else:
                self.front[(u, v)] = opp
                self.front_degree[[u, v]] += 1
                new_front.append((u, v))
        return new_front

    def try_seed(self, i, r, member) -> list[tuple[int, int]] | None:
        pos = self.pos
        nbrs = [int(j) for j in self.index.radius(pos[i], 2.0 * r) if j != i and member[j] and not self.used[j]]
        for x, j in enumerate(nbrs):
            for k in nbrs[x + 1 :]:
                for a, b, c in ((i, j, k), (i, k, j)):
                    bc = ball_center(pos[a], pos[b], pos[c], r)
                    if bc is None:
                        continue
                    center, n = bc
                    if not self._normals_agree(n, (a, b, c)):
                        continue
                    if not self._empty(center, r, {a, b, c}):
                        continue
                    self.seeds += 1
                    return self._emit(a, b, c, r)
        return None

    def pivot(self, u, v, r) -> list[tuple[int, int]] | None:
        """Roll the ball over boundary edge u -> v to find a face (v, u, m)."""
        c = self.front[(u, v)]
        pos = self.pos
        pu, pv = pos[u], pos[v]
        old = ball_center(pu, pv, pos[c], r)
        if old is None:
            return None
        c0 = old[0]
        mid = 0.5 * (pu + pv)
        axis = (pv - pu) / np.linalg.norm(pv - pu)
        u0 = c0 - mid
        cands = []
        for m in self.index.radius(mid, 2.0 * r):
            m = int(m)
            if m in (u, v, c):
                continue
            bc = ball_center(pv, pu, pos[m], r)
            if bc is None:
                continue
            cm, n = bc
            if not self._normals_agree(n, (u, v, m)):
                continue
            um = cm - mid
            ang = math.atan2(axis @ np.cross(u0, um), u0 @ um)
            if ang < 0:
                ang += 2.0 * math.pi
            if ang > 2.0 * math.pi - 1e-9:
                ang -= 2.0 * math.pi
            cands.append((ang, m, cm))
        cands.sort(key=lambda t: (t[0], t[1]))
        for _, m, cm in cands:
            if not self._empty(cm, r, {u, v, m}):
                continue
            # the first empty ball along the rotation is the pivot hit
            if _canon(v, u, m) in self.face_set:
                return None
            if not (self._edge_ok(u, m) and self._edge_ok(m, v)) or self._internal(m):
                return None
            return self._emit(v, u, m, r)
        return None

    def run_pass(self, r, member):
        queue = deque(e for e in sorted(self.front) if member[e[0]] and member[e[1]])
        seed_cursor = 0
        n = len(self.pos)
        while True:
            while queue:
                e = queue.popleft()
                if e not in self.front:
                    continue
                new = self.pivot(e[0], e[1], r)
                if new:
                    queue.extend(x for x in new if member[x[0]] and member[x[1]])
            while seed_cursor < n:
                i = seed_cursor
                seed_cursor += 1
                if member[i] and not self.used[i]:
                    new = self.try_seed(i, r, member)
                    if new:
                        queue.extend(new)
                        break
            if not queue:
                break


def _canon(a, b, c):
    if a <= b and a <= c:
        return a, b, c
    if b <= a and b <= c:
        return b, c, a
    return c, a, b


def ball_pivot(cloud: PointCloud, radii="adaptive", k: int = ADAPTIVE_K, factor: float = ADAPTIVE_FACTOR) -> TriangleMesh:
    """Ball-pivoting reconstruction.

    Args:
        cloud: points with normals set everywhere.
        radii: ascending list of radii, one pass each, or ``"adaptive"`` for
            one pass per label region using :func:`region_radii`.

    The returned mesh shares the cloud's vertex order; ``diagnostics`` holds
    the per-face generating radius and the passes that ran.
    """
    if len(cloud) == 0 or not cloud.has_normals.all():
        raise ValueError("ball pivoting needs a normal on every point")
    piv = _Pivoter(cloud)
    if isinstance(radii, str):
        if radii != "adaptive":
            raise ValueError(f"unknown radius mode {radii!r}")
        by_label = region_radii(cloud, k, factor)
        passes = []
        for r in sorted(set(by_label.values())):
            labs = [lab for lab, rr in by_label.items() if rr == r]
            passes.append((r, np.isin(cloud.labels, labs)))
    else:
        radii = [float(r) for r in radii]
        if not radii or any(r <= 0 for r in radii) or radii != sorted(radii):
            raise ValueError("radii must be positive and ascending")
        everyone = np.ones(len(cloud), dtype=bool)
        passes = [(r, everyone) for r in radii]
    for r, member in passes:
        piv.run_pass(r, member)
    diag = {
        "passes": [float(r) for r, _ in passes],
        "face_radius": piv.face_radius,
        "seeds": piv.seeds,
    }
    if not piv.faces:
        diag["note"] = "no seed triangle found"
        logger.info("ball_pivot: no seed triangle found")
    return TriangleMesh(cloud.positions, np.array(piv.faces, dtype=np.int64).reshape(-1, 3),
                        normals=cloud.normals, labels=cloud.labels, diagnostics=diag)
