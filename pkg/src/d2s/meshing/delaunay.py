"""Incremental Bowyer-Watson Delaunay triangulation in the plane.

The convex hull is closed with ghost triangles that share a single vertex at
infinity, so no bounding super-triangle is needed and hull triangles are
never lost. A ghost triangle ``(u, v, GHOST)`` is in conflict with a point
strictly outside its hull edge ``u -> v``, or lying on the open segment.
"""

from __future__ import annotations

import logging
from collections import deque

import numpy as np

from d2s.meshing.predicates import incircle, orient2d

logger = logging.getLogger(__name__)

GHOST = -1


class DelaunayError(ValueError):
    pass


class _Triangulation:
    def __init__(self, pts):
        self.pts = pts
        self.tris: dict[int, tuple[int, int, int]] = {}
        # directed edge (u, v) -> id of the triangle holding it
        self.edges: dict[tuple[int, int], int] = {}
        self._next = 0
        self.last_real = None

    def add(self, a, b, c) -> int:
        if a == GHOST:
            a, b, c = b, c, a
        elif b == GHOST:
            a, b, c = c, a, b
        tid = self._next
        self._next += 1
        self.tris[tid] = (a, b, c)
        self.edges[(a, b)] = tid
        self.edges[(b, c)] = tid
        self.edges[(c, a)] = tid
        if c != GHOST:
            self.last_real = tid
        return tid

    def remove(self, tid):
        a, b, c = self.tris.pop(tid)
        for e in ((a, b), (b, c), (c, a)):
            if self.edges.get(e) == tid:
                del self.edges[e]

    def in_conflict(self, tid, p) -> bool:
        a, b, c = self.tris[tid]
        pts = self.pts
        if c != GHOST:
            return incircle(pts[a], pts[b], pts[c], p) > 0
        o = orient2d(pts[a], pts[b], p)
        if o != 0:
            return o > 0
        # collinear with the hull edge: conflict only strictly inside the segment
        pa, pb = pts[a], pts[b]
        lo_x, hi_x = min(pa[0], pb[0]), max(pa[0], pb[0])
        lo_y, hi_y = min(pa[1], pb[1]), max(pa[1], pb[1])
        inside = lo_x <= p[0] <= hi_x and lo_y <= p[1] <= hi_y
        return inside and tuple(p) != tuple(pa) and tuple(p) != tuple(pb)

    def locate(self, p, start):
        """Visibility walk to a triangle whose closure holds ``p`` (or a ghost).

        Returns (triangle id, duplicate vertex or None).
        """
        pts = self.pts
        tid = start
        for _ in range(4 * len(self.tris) + 16):
            a, b, c = self.tris[tid]
            if c == GHOST:
                return tid, None
            moved = False
            for u, v in ((a, b), (b, c), (c, a)):
                if orient2d(pts[u], pts[v], p) < 0:
                    tid = self.edges[(v, u)]
                    moved = True
                    break
            if not moved:
                for q in (a, b, c):
                    if pts[q][0] == p[0] and pts[q][1] == p[1]:
                        return tid, q
                return tid, None
        # walk cycled: fall back to an exhaustive search for a conflict
        for tid in self.tris:
            if self.in_conflict(tid, p):
                return tid, None
        raise DelaunayError("point location failed")

    def insert(self, i) -> bool:
        p = self.pts[i]
        seed, dup = self.locate(p, self.last_real)
        if dup is not None:
            return False
        if not self.in_conflict(seed, p):
            for tid in self.tris:
                if self.in_conflict(tid, p):
                    seed = tid
                    break
            else:
                raise DelaunayError("no conflicting triangle for insertion")
        cavity = {seed}
        queue = deque([seed])
        while queue:
            tid = queue.popleft()
            a, b, c = self.tris[tid]
            for u, v in ((a, b), (b, c), (c, a)):
                nb = self.edges.get((v, u))
                if nb is not None and nb not in cavity and self.in_conflict(nb, p):
                    cavity.add(nb)
                    queue.append(nb)
        boundary = []
        for tid in sorted(cavity):
            a, b, c = self.tris[tid]
            for u, v in ((a, b), (b, c), (c, a)):
                if self.edges.get((v, u)) not in cavity:
                    boundary.append((u, v))
        for tid in cavity:
            self.remove(tid)
        for u, v in boundary:
            self.add(u, v, i)
        return True

    def real_triangles(self) -> np.ndarray:
        out = [t for _, t in sorted(self.tris.items()) if t[2] != GHOST]
        return np.array(out, dtype=np.int64).reshape(-1, 3)


def delaunay_triangles(xy) -> tuple[np.ndarray, dict]:
    """Delaunay triangles (counter-clockwise index triples) of 2-D points.

    Points are inserted in index order, so cocircular configurations keep the
    triangles formed by the lower-indexed points. Exact duplicates are skipped.

    Returns:
        (faces, diagnostics) where diagnostics lists skipped duplicate ids.
    """
    pts = [(float(x), float(y)) for x, y in np.asarray(xy, dtype=np.float64).reshape(-1, 2)]
    n = len(pts)
    if n < 3:
        raise DelaunayError("need at least 3 points")
    i0 = 0
    i1 = next((i for i in range(1, n) if pts[i] != pts[i0]), None)
    if i1 is None:
        raise DelaunayError("all points coincide")
    i2 = next((i for i in range(i1 + 1, n) if orient2d(pts[i0], pts[i1], pts[i]) != 0), None)
    if i2 is None:
        raise DelaunayError("all points are collinear")
    tri = _Triangulation(pts)
    a, b, c = (i0, i1, i2) if orient2d(pts[i0], pts[i1], pts[i2]) > 0 else (i0, i2, i1)
    tri.add(a, b, c)
    tri.add(b, a, GHOST)
    tri.add(c, b, GHOST)
    tri.add(a, c, GHOST)
    tri.last_real = 0
    duplicates = []
    for i in range(n):
        if i in (i0, i1, i2):
            continue
        if not tri.insert(i):
            duplicates.append(i)
    if duplicates:
        logger.info("delaunay: skipped %d duplicate points", len(duplicates))
    return tri.real_triangles(), {"duplicates": duplicates}


def circumradius_2d(a, b, c) -> float:
    """Circumradius of a planar triangle (inf when degenerate)."""
    a, b, c = (np.asarray(p, dtype=np.float64) for p in (a, b, c))
    la = np.linalg.norm(b - c)
    lb = np.linalg.norm(c - a)
    lc = np.linalg.norm(a - b)
    cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    area2 = abs(cross)
    if area2 == 0:
        return float("inf")
    return float(la * lb * lc / (2.0 * area2))
