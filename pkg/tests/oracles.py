"""Independent reference computations used as test oracles.

These deliberately avoid the package's own helpers so that a shared bug
cannot make an implementation agree with itself.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from fractions import Fraction

import numpy as np


def otsu_exhaustive(hist) -> int:
    """Argmax over every cut of w0*w1*(mu0-mu1)^2 in exact rationals; first max wins."""
    hist = [int(h) for h in hist]
    total = sum(hist)
    best, best_cut = None, None
    for cut in range(1, len(hist)):
        n0 = sum(hist[:cut])
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            score = Fraction(0)
        else:
            mu0 = Fraction(sum(i * hist[i] for i in range(cut)), n0)
            mu1 = Fraction(sum(i * hist[i] for i in range(cut, len(hist))), n1)
            score = Fraction(n0 * n1, total * total) * (mu0 - mu1) ** 2
        if best is None or score > best:
            best, best_cut = score, cut
    return best_cut


def two_pass_stats(values: np.ndarray) -> tuple[float, float, float, float]:
    vals = [float(v) for v in values]
    n = len(vals)
    mean = math.fsum(vals) / n
    var = math.fsum((v - mean) ** 2 for v in vals) / n
    return min(vals), max(vals), mean, math.sqrt(var)


# ---------------------------------------------------------------- geometry


def segment_distance(p, a, b) -> float:
    p, a, b = (np.asarray(x, dtype=np.float64) for x in (p, a, b))
    ab = b - a
    L = ab @ ab
    if L == 0:
        return float(np.linalg.norm(p - a))
    t = min(1.0, max(0.0, (p - a) @ ab / L))
    return float(np.linalg.norm(p - (a + t * ab)))


def point_triangle_distance(p, a, b, c) -> float:
    """Project onto the supporting plane; inside by barycentrics, else nearest edge."""
    p, a, b, c = (np.asarray(x, dtype=np.float64) for x in (p, a, b, c))
    n = np.cross(b - a, c - a)
    nn = n @ n
    edges = min(segment_distance(p, a, b), segment_distance(p, b, c), segment_distance(p, c, a))
    if nn == 0:
        return edges
    h = (p - a) @ n / nn
    q = p - h * n
    # barycentric coordinates from sub-triangle areas
    wa = np.cross(b - q, c - q) @ n / nn
    wb = np.cross(c - q, a - q) @ n / nn
    wc = np.cross(a - q, b - q) @ n / nn
    if wa >= 0 and wb >= 0 and wc >= 0:
        return float(abs(h) * math.sqrt(nn))
    return edges


def brute_point_mesh_distance(p, vertices, faces) -> float:
    return min(point_triangle_distance(p, *vertices[f]) for f in faces)


def circumcircle_contains_strictly(a, b, c, d) -> bool:
    """Exact rational test: is d strictly inside the circumcircle of triangle abc?"""
    ax, ay, bx, by, cx, cy, dx, dy = (Fraction(float(v)) for v in (*a, *b, *c, *d))
    orient = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    m = [
        [ax - dx, ay - dy, (ax - dx) ** 2 + (ay - dy) ** 2],
        [bx - dx, by - dy, (bx - dx) ** 2 + (by - dy) ** 2],
        [cx - dx, cy - dy, (cx - dx) ** 2 + (cy - dy) ** 2],
    ]
    det = (
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    )
    return det * (1 if orient > 0 else -1) > 0


def circumcircle_violations(xy, tris) -> int:
    """Count (triangle, point) pairs with the point strictly inside the circumcircle.

    Float determinants decide clear cases; near-zero ones are redone exactly.
    """
    xy = np.asarray(xy, dtype=np.float64)
    count = 0
    for t in tris:
        a, b, c = xy[list(t)]
        rel = np.stack([a, b, c])[None, :, :] - xy[:, None, :]
        lift = (rel**2).sum(-1)
        m = np.concatenate([rel, lift[..., None]], axis=2)
        det = np.linalg.det(m)
        orient = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        scale = np.abs(m).max(axis=(1, 2)) ** 4 + 1e-300
        for i in range(len(xy)):
            if i in t:
                continue
            if abs(det[i]) > 1e-9 * scale[i]:
                count += det[i] * np.sign(orient) > 0
            else:
                count += circumcircle_contains_strictly(a, b, c, xy[i])
    return int(count)


def min_angle(xy, tris) -> float:
    best = math.inf
    for t in tris:
        p = [np.asarray(xy[i], dtype=np.float64) for i in t]
        for i in range(3):
            u = p[(i + 1) % 3] - p[i]
            v = p[(i + 2) % 3] - p[i]
            cosang = np.clip(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)), -1, 1)
            best = min(best, math.degrees(math.acos(cosang)))
    return best


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _fan_triangulation(xy) -> set:
    """Incremental left-to-right sweep: each new point connects to every visible hull edge."""
    order = sorted(range(len(xy)), key=lambda i: (xy[i][0], xy[i][1]))
    a, b = order[0], order[1]
    k = 2
    while _orient(xy[a], xy[b], xy[order[k]]) == 0:
        k += 1
    c = order[k]
    rest = order[2:k] + order[k + 1 :]
    if _orient(xy[a], xy[b], xy[c]) < 0:
        b, c = c, b
    tris = {tuple(sorted((a, b, c)))}
    hull = [a, b, c]  # counter-clockwise
    for p in sorted(rest, key=lambda i: (xy[i][0], xy[i][1])):
        n = len(hull)
        visible = [_orient(xy[hull[i]], xy[hull[(i + 1) % n]], xy[p]) < 0 for i in range(n)]
        for i in range(n):
            if visible[i]:
                tris.add(tuple(sorted((hull[i], hull[(i + 1) % n], p))))
        # rebuild hull: drop vertices strictly between visible edges
        new = []
        for i in range(n):
            if not (visible[i - 1] and visible[i]):
                new.append(hull[i])
            if visible[i] and not visible[(i + 1) % n]:
                new.append(p)
        hull = new
    return tris


def all_triangulations(xy) -> list[frozenset]:
    """Every triangulation of a small point set, by BFS over the edge-flip graph."""
    xy = [tuple(map(float, p)) for p in xy]
    start = frozenset(_fan_triangulation(xy))
    seen = {start}
    queue = deque([start])
    while queue:
        tri = queue.popleft()
        edge_tris = {}
        for t in tri:
            for e in itertools.combinations(t, 2):
                edge_tris.setdefault(e, []).append(t)
        for (i, j), ts in edge_tris.items():
            if len(ts) != 2:
                continue
            k = next(v for v in ts[0] if v not in (i, j))
            m = next(v for v in ts[1] if v not in (i, j))
            # the quad i-k-j-m is convex iff k, m lie on opposite sides of ij and i, j on opposite sides of km
            if _orient(xy[i], xy[j], xy[k]) * _orient(xy[i], xy[j], xy[m]) >= 0:
                continue
            if _orient(xy[k], xy[m], xy[i]) * _orient(xy[k], xy[m], xy[j]) >= 0:
                continue
            flipped = (tri - {ts[0], ts[1]}) | {tuple(sorted((k, m, i))), tuple(sorted((k, m, j)))}
            if flipped not in seen:
                seen.add(flipped)
                queue.append(flipped)
    return list(seen)


def ball_centers(pa, pb, pc, r):
    """Both centres of radius-r spheres through three points (empty list if none)."""
    pa, pb, pc = (np.asarray(x, dtype=np.float64) for x in (pa, pb, pc))
    n = np.cross(pb - pa, pc - pa)
    # circumcentre from the 3x3 linear system: equidistant and in-plane
    A = np.array([2 * (pb - pa), 2 * (pc - pa), n])
    rhs = np.array([pb @ pb - pa @ pa, pc @ pc - pa @ pa, n @ pa])
    cc = np.linalg.solve(A, rhs)
    rho2 = (cc - pa) @ (cc - pa)
    if rho2 > r * r:
        return []
    h = math.sqrt(r * r - rho2)
    unit = n / np.linalg.norm(n)
    return [cc + h * unit, cc - h * unit]


# ---------------------------------------------------------------- compositing


def brute_render(bg, scene_depth, valid, intr, mask, color, offset, world_size, position):
    """Scan every image pixel, inverse-map it into the sprite, depth-test it."""
    x, y, z = (float(c) for c in position)
    img = bg.copy()
    if z <= 0:
        return img
    sh, sw = mask.shape
    width = intr.fx * world_size / z
    height = intr.fy * world_size * sh / sw / z
    left = intr.fx * x / z + intr.cx - width / 2
    top = intr.fy * y / z + intr.cy - height / 2
    h, w = scene_depth.shape
    for v in range(h):
        sv = math.floor((v - top) / height * sh)
        if not 0 <= sv < sh:
            continue
        for u in range(w):
            su = math.floor((u - left) / width * sw)
            if not 0 <= su < sw or not mask[sv, su]:
                continue
            d = z + offset[sv, su]
            scene = scene_depth[v, u] if valid[v, u] else math.inf
            if d < scene:
                img[v, u] = color[sv, su]
    return img
