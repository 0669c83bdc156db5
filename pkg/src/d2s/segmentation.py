"""Depth-map segmentation algorithms and the feature-based algorithm ranker."""

from __future__ import annotations

import heapq
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import ndimage

from d2s.depth_core import (
    HIST_BINS,
    DepthMap,
    depth_gradients,
    depth_histogram,
    depth_stats,
    detect_keypoints,
    median_filter,
    read_pgm16,
    write_pgm16,
)

logger = logging.getLogger(__name__)

ALGORITHMS = ("threshold", "region_grow", "watershed", "graph", "mean_shift", "superpixel")
FOUR_CONN = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel region ids; 0 marks unlabeled/invalid pixels."""

    labels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.labels, dtype=np.int64)
        if arr.ndim != 2 or (arr.size and arr.min() < 0):
            raise ValueError("labels must be a 2-D array of non-negative ints")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "labels", arr)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self):
        return self.labels.shape

    @property
    def region_count(self) -> int:
        return int(np.count_nonzero(np.unique(self.labels)))

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)

    __hash__ = None


@dataclass(frozen=True)
class SegmentationResult:
    label_map: LabelMap
    algorithm: str
    region_count: int
    params_used: dict = field(default_factory=dict)
    satisfactory: bool = True
    tried: tuple = ()

    def sidecar(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "params_used": self.params_used,
            "region_count": self.region_count,
            "satisfactory": self.satisfactory,
            "tried": list(self.tried),
        }


@dataclass(frozen=True)
class AlgoFeatures:
    gradient_energy: float
    boundary_fraction: float
    depth_entropy: float
    keypoint_density: float
    valid_fraction: float
    bimodality: float
    depth_range: float = 0.0

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}


@dataclass(frozen=True)
class AlgoRanking:
    ranking: list
    k: int

    @property
    def algorithms(self) -> list[str]:
        return [a for a, _ in self.ranking]


# ---------------------------------------------------------------------------
# Label helpers


def canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Renumber nonzero labels 1..L in order of first row-major appearance."""
    flat = labels.ravel()
    ids, first = np.unique(flat, return_index=True)
    keep = ids != 0
    ids, first = ids[keep], first[keep]
    order = ids[np.argsort(first, kind="stable")]
    lut = np.zeros(int(flat.max(initial=0)) + 1, dtype=np.int64)
    lut[order] = np.arange(1, len(order) + 1)
    return lut[labels]


def connected_relabel(classes: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Split each class into 4-connected components, canonical numbering."""
    out = np.zeros(classes.shape, dtype=np.int64)
    nxt = 0
    for cls in np.unique(classes[valid]):
        comp, n = ndimage.label(valid & (classes == cls), structure=FOUR_CONN)
        out[comp > 0] = comp[comp > 0] + nxt
        nxt += n
    return canonical_labels(out)


def _result(labels: np.ndarray, algorithm: str, params: dict) -> SegmentationResult:
    lm = LabelMap(canonical_labels(labels))
    return SegmentationResult(lm, algorithm, lm.region_count, dict(params))


def is_four_connected(labels: np.ndarray, label: int) -> bool:
    _, n = ndimage.label(labels == label, structure=FOUR_CONN)
    return n == 1


# ---------------------------------------------------------------------------
# Thresholding


def otsu_cut(hist) -> int:
    """Cut index ``c`` in 1..len(hist)-1 maximizing between-class variance.

    Class 0 holds bins ``< c``. Evaluated exactly with integer arithmetic;
    the first maximum wins.
    """
    counts = [int(c) for c in hist]
    total_n = sum(counts)
    total_s = sum(i * c for i, c in enumerate(counts))
    best_c, best = 1, Fraction(-1)
    n0 = s0 = 0
    for c in range(1, len(counts)):
        n0 += counts[c - 1]
        s0 += (c - 1) * counts[c - 1]
        n1 = total_n - n0
        if n0 == 0 or n1 == 0:
            var = Fraction(0)
        else:
            num = total_n * s0 - n0 * total_s
            var = Fraction(num * num, n0 * n1)
        if var > best:
            best, best_c = var, c
    return best_c


def threshold_segment(depth: DepthMap, thresholds="auto_otsu") -> SegmentationResult:
    """Band segmentation by depth thresholds, or Otsu's threshold when ``auto_otsu``.

    Explicit thresholds give band labels; auto mode splits the two Otsu
    classes into 4-connected regions.
    """
    valid = depth.valid
    vals = depth.depth[valid]
    if isinstance(thresholds, str):
        if thresholds != "auto_otsu":
            raise ValueError(f"unknown threshold mode {thresholds!r}")
        if vals.size == 0:
            return _result(np.zeros(depth.shape, np.int64), "threshold", {"mode": "auto_otsu"})
        lo, hi = float(vals.min()), float(vals.max())
        bins = np.zeros(depth.shape, dtype=np.int64)
        bins[valid] = depth_histogram(vals, lo, hi)
        cut = otsu_cut(np.bincount(bins[valid], minlength=HIST_BINS))
        classes = np.where(bins >= cut, 2, 1)
        labels = connected_relabel(classes, valid)
        t = lo + cut * (hi - lo) / HIST_BINS
        return _result(labels, "threshold", {"mode": "auto_otsu", "cut_bin": cut, "threshold": t})
    ts = [float(t) for t in thresholds]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError("thresholds must be strictly increasing")
    band = np.searchsorted(np.array(ts), depth.depth, side="left") + 1
    labels = np.where(valid, band, 0)
    return _result(labels, "threshold", {"mode": "bands", "thresholds": ts})


# ---------------------------------------------------------------------------
# Region growing


def _neighbors4(y, x, h, w):
    if y > 0:
        yield y - 1, x
    if y + 1 < h:
        yield y + 1, x
    if x > 0:
        yield y, x - 1
    if x + 1 < w:
        yield y, x + 1


def region_grow(depth: DepthMap, seeds="auto", tolerance: float = 0.1) -> SegmentationResult:
    """Grow 4-connected regions from seeds; a neighbour joins while its depth
    is within ``tolerance`` of the seed depth.

    Explicit seeds are grown in order; any valid pixel left unlabeled is then
    seeded in row-major order.
    """
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    h, w = depth.shape
    d = depth.depth
    valid = depth.valid
    labels = np.zeros((h, w), dtype=np.int64)
    seed_list = []
    if not isinstance(seeds, str):
        for sy, sx in seeds:
            if not (0 <= sy < h and 0 <= sx < w) or not valid[sy, sx]:
                raise ValueError(f"seed {(sy, sx)} is not a valid pixel")
            seed_list.append((int(sy), int(sx)))
    elif seeds != "auto":
        raise ValueError(f"unknown seed mode {seeds!r}")

    nxt = 0

    def grow(sy, sx):
        nonlocal nxt
        nxt += 1
        ref = d[sy, sx]
        labels[sy, sx] = nxt
        queue = deque([(sy, sx)])
        while queue:
            y, x = queue.popleft()
            for ny, nx in _neighbors4(y, x, h, w):
                if labels[ny, nx] == 0 and valid[ny, nx] and abs(d[ny, nx] - ref) <= tolerance:
                    labels[ny, nx] = nxt
                    queue.append((ny, nx))

    for sy, sx in seed_list:
        if labels[sy, sx] == 0:
            grow(sy, sx)
    for sy, sx in zip(*np.nonzero(valid)):
        if labels[sy, sx] == 0:
            grow(sy, sx)
    # seeds keep their growth order so seed i maps to label i+1
    lm = LabelMap(labels)
    params = {"tolerance": tolerance, "seeds": "auto" if isinstance(seeds, str) else [list(s) for s in seed_list]}
    return SegmentationResult(lm, "region_grow", lm.region_count, params)


# ---------------------------------------------------------------------------
# Watershed


def _regional_minima(mag: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Label plateaus of equal value with no strictly lower valid neighbour."""
    h, w = mag.shape
    plateau = np.zeros((h, w), dtype=np.int64)
    minima = np.zeros((h, w), dtype=np.int64)
    count = 0
    nxt = 0
    for y0, x0 in zip(*np.nonzero(valid)):
        if plateau[y0, x0]:
            continue
        nxt += 1
        val = mag[y0, x0]
        plateau[y0, x0] = nxt
        members = [(y0, x0)]
        queue = deque(members)
        is_min = True
        while queue:
            y, x = queue.popleft()
            for ny, nx in _neighbors4(y, x, h, w):
                if not valid[ny, nx]:
                    continue
                if mag[ny, nx] < val:
                    is_min = False
                elif mag[ny, nx] == val and plateau[ny, nx] == 0:
                    plateau[ny, nx] = nxt
                    members.append((ny, nx))
                    queue.append((ny, nx))
        if is_min:
            count += 1
            for y, x in members:
                minima[y, x] = count
    return minima


def watershed_segment(depth: DepthMap, smoothing_window: int = 3) -> SegmentationResult:
    """Priority-flood watershed on the gradient magnitude of the smoothed map.

    Markers are regional minima of the magnitude. Pixels are flooded in
    (magnitude, y, x) order and join the lowest-numbered adjacent basin.
    """
    smooth = median_filter(depth, smoothing_window) if smoothing_window else depth
    grad = depth_gradients(smooth)
    valid = depth.valid
    top = float(grad.magnitude.max(initial=0.0)) + 1.0
    # pixels with an undefined gradient are flooded last
    mag = np.where(grad.valid, grad.magnitude, top)
    labels = _regional_minima(mag, valid)
    h, w = depth.shape
    heap = []
    for y, x in zip(*np.nonzero(labels)):
        for ny, nx in _neighbors4(y, x, h, w):
            if valid[ny, nx] and labels[ny, nx] == 0:
                heap.append((mag[ny, nx], ny, nx))
    heapq.heapify(heap)
    while heap:
        _, y, x = heapq.heappop(heap)
        if labels[y, x]:
            continue
        adj = [labels[ny, nx] for ny, nx in _neighbors4(y, x, h, w) if labels[ny, nx]]
        labels[y, x] = min(adj)
        for ny, nx in _neighbors4(y, x, h, w):
            if valid[ny, nx] and labels[ny, nx] == 0:
                heapq.heappush(heap, (mag[ny, nx], ny, nx))
    return _result(labels, "watershed", {"smoothing_window": smoothing_window})


# ---------------------------------------------------------------------------
# Graph-based merging


class _DisjointSet:
    def __init__(self, n):
        self.parent = np.arange(n)
        self.size = np.ones(n, dtype=np.int64)
        self.internal = np.zeros(n)

    def find(self, a):
        parent = self.parent
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(self, a, b, weight):
        if self.size[a] < self.size[b] or (self.size[a] == self.size[b] and a > b):
            a, b = b, a
        self.parent[b] = a
        self.size[a] += self.size[b]
        self.internal[a] = max(self.internal[a], self.internal[b], weight)
        return a


def _grid_edges(depth: DepthMap):
    h, w = depth.shape
    idx = np.arange(h * w).reshape(h, w)
    d = depth.depth
    v = depth.valid
    a = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    b = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    ok = v.ravel()[a] & v.ravel()[b]
    a, b = a[ok], b[ok]
    wts = np.abs(d.ravel()[a] - d.ravel()[b])
    order = np.lexsort((b, a, wts))
    return a[order], b[order], wts[order]


def graph_segment(depth: DepthMap, k: float, min_size: int = 1) -> SegmentationResult:
    """Greedy graph merging with the Felzenszwalb-Huttenlocher criterion.

    Edges join 4-neighbours with weight ``|depth(p) - depth(q)|``. Components
    ``A`` and ``B`` merge over an edge of weight ``w`` when
    ``w <= min(Int(A) + k/|A|, Int(B) + k/|B|)``; a second pass absorbs
    components smaller than ``min_size`` along their lightest edges.
    """
    if not k > 0:
        raise ValueError("k must be positive")
    h, w = depth.shape
    a, b, wts = _grid_edges(depth)
    ds = _DisjointSet(h * w)
    for p, q, wt in zip(a.tolist(), b.tolist(), wts.tolist()):
        ra, rb = ds.find(p), ds.find(q)
        if ra == rb:
            continue
        if wt <= min(ds.internal[ra] + k / ds.size[ra], ds.internal[rb] + k / ds.size[rb]):
            ds.union(ra, rb, wt)
    if min_size > 1:
        for p, q in zip(a.tolist(), b.tolist()):
            ra, rb = ds.find(p), ds.find(q)
            if ra != rb and (ds.size[ra] < min_size or ds.size[rb] < min_size):
                ds.union(ra, rb, 0.0)
    roots = np.array([ds.find(i) for i in range(h * w)]).reshape(h, w) + 1
    labels = np.where(depth.valid, roots, 0)
    return _result(labels, "graph", {"k": k, "min_size": min_size})


# ---------------------------------------------------------------------------
# Mean shift


def mean_shift_modes(values, bandwidth: float, tol: float = 1e-6, max_iter: int = 200) -> np.ndarray:
    """Modes of a 1-D flat-kernel mean shift, merged within ``bandwidth / 2``.

    Every distinct value starts a trajectory; merged modes are the
    count-weighted mean of their converged positions. Returned sorted.
    """
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size == 0:
        return np.zeros(0)
    uniq, counts = np.unique(vals, return_counts=True)
    csum = np.concatenate([[0.0], np.cumsum(uniq * counts)])
    ccount = np.concatenate([[0], np.cumsum(counts)])
    pos = uniq.copy()
    active = np.ones(len(pos), dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        p = pos[active]
        lo = np.searchsorted(uniq, p - bandwidth, side="left")
        hi = np.searchsorted(uniq, p + bandwidth, side="right")
        new = (csum[hi] - csum[lo]) / (ccount[hi] - ccount[lo])
        shift = np.abs(new - p)
        pos[active] = new
        idx = np.nonzero(active)[0]
        active[idx[shift < tol]] = False
    order = np.argsort(pos, kind="stable")
    modes = []
    group_pos, group_w = [], []
    for i in order:
        if group_pos and pos[i] - group_pos[0] > bandwidth / 2:
            modes.append(np.dot(group_pos, group_w) / np.sum(group_w))
            group_pos, group_w = [], []
        group_pos.append(pos[i])
        group_w.append(counts[i])
    modes.append(np.dot(group_pos, group_w) / np.sum(group_w))
    return np.array(modes)


def mean_shift_segment(depth: DepthMap, bandwidth: float) -> SegmentationResult:
    """Label pixels by nearest depth mode, then split into 4-connected regions."""
    valid = depth.valid
    modes = mean_shift_modes(depth.depth[valid], bandwidth)
    if modes.size == 0:
        return _result(np.zeros(depth.shape, np.int64), "mean_shift", {"bandwidth": bandwidth, "modes": []})
    nearest = np.argmin(np.abs(depth.depth[..., None] - modes[None, None, :]), axis=2)
    labels = connected_relabel(nearest, valid)
    return _result(labels, "mean_shift", {"bandwidth": bandwidth, "modes": [float(m) for m in modes]})


# ---------------------------------------------------------------------------
# Superpixels


def _enforce_connectivity(labels: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Keep each label's largest 4-connected piece; merge orphans into the
    adjacent label sharing the longest border."""
    h, w = labels.shape
    out = labels.copy()
    for lab in np.unique(out[valid]):
        comp, n = ndimage.label(out == lab, structure=FOUR_CONN)
        if n <= 1:
            continue
        sizes = np.bincount(comp.ravel())[1:]
        keep = int(np.argmax(sizes)) + 1
        out[(comp > 0) & (comp != keep)] = 0
    orphan = valid & (out == 0)
    while orphan.any():
        comp, n = ndimage.label(orphan, structure=FOUR_CONN)
        progressed = False
        for c in range(1, n + 1):
            mask = comp == c
            ring = ndimage.binary_dilation(mask, structure=FOUR_CONN) & ~mask
            neigh = out[ring]
            neigh = neigh[neigh > 0]
            if neigh.size == 0:
                continue
            votes = np.bincount(neigh)
            out[mask] = int(np.argmax(votes))
            progressed = True
        if not progressed:
            # isolated valid islands with no labeled neighbour become their own regions
            nxt = int(out.max()) + 1
            out[orphan] = comp[orphan] + nxt
        orphan = valid & (out == 0)
    return out


def superpixel_segment(depth: DepthMap, n_segments: int, compactness: float = 1.0, iterations: int = 10) -> SegmentationResult:
    """SLIC-style clustering in (x, y, depth).

    Distance is ``(ddepth / compactness)^2 + (dx^2 + dy^2) / S^2`` with
    ``S = sqrt(pixels / n_segments)``; each center searches a 2S window.
    """
    valid = depth.valid
    n_valid = int(valid.sum())
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    if n_segments > n_valid:
        raise ValueError("more segments than valid pixels")
    if not compactness > 0:
        raise ValueError("compactness must be positive")
    h, w = depth.shape
    d = depth.depth
    S = math.sqrt(h * w / n_segments)
    nx = max(1, int(round(math.sqrt(n_segments * w / h))))
    ny = max(1, int(round(n_segments / nx)))
    centers = []
    for j in range(ny):
        for i in range(nx):
            # pixel centres sit on integer coordinates
            cx = (i + 0.5) * w / nx - 0.5
            cy = (j + 0.5) * h / ny - 0.5
            px, py = min(int(round(cx)), w - 1), min(int(round(cy)), h - 1)
            if not valid[py, px]:
                vy, vx = np.nonzero(valid)
                near = int(np.argmin((vx - cx) ** 2 + (vy - cy) ** 2))
                px, py = int(vx[near]), int(vy[near])
            centers.append([cx, cy, d[py, px]])
    centers = np.array(centers)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    labels = np.zeros((h, w), dtype=np.int64)
    r = int(math.ceil(2 * S))
    for _ in range(iterations):
        best = np.full((h, w), np.inf)
        labels[:] = 0
        for ci, (cx, cy, cd) in enumerate(centers):
            x0, x1 = max(0, int(cx) - r), min(w, int(cx) + r + 1)
            y0, y1 = max(0, int(cy) - r), min(h, int(cy) + r + 1)
            dist = ((d[y0:y1, x0:x1] - cd) / compactness) ** 2 + (
                (xs[y0:y1, x0:x1] - cx) ** 2 + (ys[y0:y1, x0:x1] - cy) ** 2
            ) / (S * S)
            sub_best = best[y0:y1, x0:x1]
            win = (dist < sub_best) & valid[y0:y1, x0:x1]
            sub_best[win] = dist[win]
            labels[y0:y1, x0:x1][win] = ci + 1
        for ci in range(len(centers)):
            mask = labels == ci + 1
            if mask.any():
                centers[ci] = [xs[mask].mean(), ys[mask].mean(), d[mask].mean()]
    labels = _enforce_connectivity(labels, valid)
    return _result(labels, "superpixel", {"n_segments": n_segments, "compactness": compactness})


# ---------------------------------------------------------------------------
# Features and ranking


def boundary_threshold(magnitude: np.ndarray) -> float:
    """Mean plus two standard deviations of the gradient magnitude."""
    if magnitude.size == 0:
        return 0.0
    return float(magnitude.mean() + 2.0 * magnitude.std())


def bimodality_index(hist) -> float:
    """Otsu separability: best between-class variance over total variance."""
    counts = np.asarray(hist, dtype=np.float64)
    n = counts.sum()
    if n == 0:
        return 0.0
    centers = np.arange(len(counts), dtype=np.float64)
    mu = (counts * centers).sum() / n
    total_var = (counts * (centers - mu) ** 2).sum() / n
    if total_var <= 0:
        return 0.0
    cut = otsu_cut(counts.astype(np.int64))
    w0 = counts[:cut].sum() / n
    w1 = 1.0 - w0
    if w0 == 0 or w1 == 0:
        return 0.0
    mu0 = (counts[:cut] * centers[:cut]).sum() / (w0 * n)
    mu1 = (counts[cut:] * centers[cut:]).sum() / (w1 * n)
    return float(min(1.0, w0 * w1 * (mu0 - mu1) ** 2 / total_var))


def extract_features(depth: DepthMap) -> AlgoFeatures:
    stats = depth_stats(depth)
    grad = depth_gradients(depth)
    mag = grad.magnitude[grad.valid]
    gradient_energy = float(np.mean(mag**2)) if mag.size else 0.0
    thr = boundary_threshold(mag)
    boundary_fraction = float(np.mean(mag > thr)) if mag.size and thr > 0 else 0.0
    hist = stats.histogram.astype(np.float64)
    if hist.sum() > 0:
        p = hist[hist > 0] / hist.sum()
        entropy = float(-(p * np.log2(p)).sum()) + 0.0
    else:
        entropy = 0.0
    kps = detect_keypoints(depth, 256)
    density = len(kps) / (depth.depth.size / 1000.0)
    rng = 0.0 if stats.valid_fraction == 0 else stats.max - stats.min
    return AlgoFeatures(
        gradient_energy=gradient_energy,
        boundary_fraction=boundary_fraction,
        depth_entropy=entropy,
        keypoint_density=density,
        valid_fraction=stats.valid_fraction,
        bimodality=bimodality_index(stats.histogram),
        depth_range=rng,
    )


def algorithm_scores(f: AlgoFeatures) -> dict[str, float]:
    """Fixed weight table relating depth-map features to each algorithm."""
    ge = f.gradient_energy / f.depth_range**2 if f.depth_range > 0 else 0.0
    return {
        "threshold": 2.0 * f.bimodality - ge,
        "region_grow": f.valid_fraction - f.depth_entropy / 6.0,
        "watershed": ge + f.boundary_fraction,
        "graph": f.boundary_fraction + f.depth_entropy / 6.0,
        "mean_shift": f.bimodality + (1.0 - f.boundary_fraction),
        "superpixel": 1.0 - f.bimodality,
    }


def rank_algorithms(features: AlgoFeatures, k: int = 6) -> AlgoRanking:
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = algorithm_scores(features)
    order = sorted(ALGORITHMS, key=lambda a: (-scores[a], ALGORITHMS.index(a)))
    return AlgoRanking([(a, scores[a]) for a in order[: min(k, len(ALGORITHMS))]], k)


def default_params(algorithm: str, depth: DepthMap) -> dict:
    """Parameters used by :func:`segment_auto`, derived from the depth statistics."""
    stats = depth_stats(depth)
    spread = stats.stddev if stats.valid_fraction > 0 and stats.stddev > 0 else 1.0
    rng = stats.max - stats.min if stats.valid_fraction > 0 else 0.0
    n_valid = int(depth.valid.sum())
    if algorithm == "threshold":
        return {"thresholds": "auto_otsu"}
    if algorithm == "region_grow":
        return {"seeds": "auto", "tolerance": max(rng / 8.0, 1e-6)}
    if algorithm == "watershed":
        return {"smoothing_window": 3}
    if algorithm == "graph":
        return {"k": spread, "min_size": max(4, n_valid // 256)}
    if algorithm == "mean_shift":
        return {"bandwidth": max(rng / 8.0, 1e-6)}
    if algorithm == "superpixel":
        # a flat map has no relief for superpixels to follow
        n = max(1, min(16, n_valid // 64)) if rng > 0 else 1
        return {"n_segments": n, "compactness": max(rng / 4.0, 1e-6)}
    raise ValueError(f"unknown algorithm {algorithm!r}")


def run_algorithm(algorithm: str, depth: DepthMap, params: dict) -> SegmentationResult:
    fn = {
        "threshold": threshold_segment,
        "region_grow": region_grow,
        "watershed": watershed_segment,
        "graph": graph_segment,
        "mean_shift": mean_shift_segment,
        "superpixel": superpixel_segment,
    }[algorithm]
    return fn(depth, **params)


def passes_gates(result: SegmentationResult, depth: DepthMap) -> bool:
    """Sanity gates: 2 <= regions <= valid/16 and largest region < 95%."""
    n_valid = int(depth.valid.sum())
    if n_valid == 0 or not 2 <= result.region_count <= n_valid / 16:
        return False
    sizes = np.bincount(result.label_map.labels.ravel())[1:]
    return sizes.max() < 0.95 * n_valid


def segment_auto(depth: DepthMap, k: int = 3) -> SegmentationResult:
    """Try the top-k ranked algorithms and return the first passing the gates.

    Falls back to the top-ranked result flagged ``satisfactory=False``.
    """
    ranking = rank_algorithms(extract_features(depth), k)
    first = None
    tried = []
    for algorithm in ranking.algorithms:
        params = default_params(algorithm, depth)
        res = run_algorithm(algorithm, depth, params)
        ok = passes_gates(res, depth)
        tried.append(algorithm)
        logger.debug("segment_auto: %s -> %d regions (%s)", algorithm, res.region_count, ok)
        if first is None:
            first = res
        if ok:
            return SegmentationResult(res.label_map, algorithm, res.region_count, res.params_used, True, tuple(tried))
    return SegmentationResult(first.label_map, first.algorithm, first.region_count, first.params_used, False, tuple(tried))


# ---------------------------------------------------------------------------
# Persistence


def save_labels(result: SegmentationResult, path) -> Path:
    """Write labels as a 16-bit PGM plus ``<path>.json`` sidecar; returns the sidecar path."""
    path = Path(path)
    write_pgm16(path, result.label_map.labels)
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps(result.sidecar(), sort_keys=True, indent=2) + "\n")
    return sidecar


def load_labels(path) -> LabelMap:
    levels, _ = read_pgm16(path)
    return LabelMap(levels)
