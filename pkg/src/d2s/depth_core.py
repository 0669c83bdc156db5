"""Depth-map container, file formats, fixtures and low-level analysis.

Depth values follow the "farther is larger" convention: a larger sample is a
surface farther from the camera. Invalid pixels carry ``valid == False`` and
store 0 in ``depth``.
"""

from __future__ import annotations

import logging
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

HIST_BINS = 64
RAW_MAGIC = b"DPTH"
FORMATS = ("pgm16", "csv", "rawf32")
FIXTURE_KINDS = ("plane", "ramp", "step", "sphere_bump", "two_objects")


class DepthFormatError(ValueError):
    """Raised when a depth file cannot be parsed under its declared format."""


@dataclass(frozen=True)
class DepthMap:
    """Rectangular depth grid with a validity mask.

    Attributes:
        depth: (H, W) float64 array of depths in scene units.
        valid: (H, W) boolean array, False where there is no measurement.
    """

    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if depth.ndim != 2 or depth.shape != valid.shape:
            raise ValueError(
                f"depth {depth.shape} and mask {valid.shape} must be equal 2-D shapes"
            )
        vals = depth[valid]
        if vals.size and (not np.all(np.isfinite(vals)) or np.any(vals < 0)):
            raise ValueError("valid depth samples must be finite and >= 0")
        depth = np.where(valid, depth, 0.0)
        depth.setflags(write=False)
        valid = valid.copy()
        valid.setflags(write=False)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_array(cls, depth) -> "DepthMap":
        """Build a map from a float array where NaN marks invalid pixels."""
        arr = np.asarray(depth, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        valid = np.isfinite(arr)
        return cls(np.where(valid, arr, 0.0), valid)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    def as_nan(self) -> np.ndarray:
        """Depth array with NaN in invalid pixels."""
        return np.where(self.valid, self.depth, np.nan)

    def __eq__(self, other):
        if not isinstance(other, DepthMap):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.valid, other.valid)
            and np.array_equal(self.depth, other.depth)
        )

    __hash__ = None


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}


@dataclass(frozen=True)
class CameraExtrinsics:
    """World-to-camera rigid transform: ``p_cam = R @ p_world + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9, rtol=0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraExtrinsics":
        return cls()

    @property
    def camera_center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }

    def __eq__(self, other):
        if not isinstance(other, CameraExtrinsics):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    __hash__ = None


@dataclass(frozen=True)
class DepthStats:
    """Statistics over valid pixels; min/max/mean/stddev are NaN if none."""

    min: float
    max: float
    mean: float
    stddev: float
    histogram: np.ndarray
    valid_fraction: float

    def to_dict(self) -> dict:
        def num(x):
            return None if math.isnan(x) else float(x)

        return {
            "min": num(self.min),
            "max": num(self.max),
            "mean": num(self.mean),
            "stddev": num(self.stddev),
            "histogram": [int(c) for c in self.histogram],
            "valid_fraction": float(self.valid_fraction),
        }


@dataclass(frozen=True)
class GradientField:
    """Per-pixel depth derivatives in depth units per pixel.

    ``valid`` is False where a stencil sample was invalid; gx, gy and
    magnitude are 0 there.
    """

    gx: np.ndarray
    gy: np.ndarray
    magnitude: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True)
class Keypoint:
    x: int
    y: int
    score: float


@dataclass(frozen=True)
class ClusterBudget:
    """K-means grouping of keypoints plus the budget assigned to each group.

    Attributes:
        cluster_centers: (K, 2) array of (x, y) centers.
        assignments: per-keypoint cluster index.
        budget_per_cluster: integer budget per cluster, summing to the total.
        counts: keypoints per cluster.
        wcss_history: within-cluster sum of squares after each assignment step.
    """

    cluster_centers: np.ndarray
    assignments: np.ndarray
    budget_per_cluster: list[int]
    counts: list[int]
    wcss_history: list[float]


# ---------------------------------------------------------------------------
# File I/O


def _pgm_tokens(data: bytes):
    """Split a PNM header into tokens, returning (tokens, comments, data_offset)."""
    tokens: list[bytes] = []
    comments: list[str] = []
    pos = 0
    n = len(data)
    while len(tokens) < 4:
        if pos >= n:
            raise DepthFormatError("truncated PGM header")
        c = data[pos : pos + 1]
        if c == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise DepthFormatError("unterminated PGM comment")
            comments.append(data[pos + 1 : end].decode("ascii", "replace").strip())
            pos = end + 1
        elif c.isspace():
            pos += 1
        else:
            start = pos
            while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
                pos += 1
            tokens.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    return tokens, comments, pos + 1


def read_pgm16(path) -> tuple[np.ndarray, float]:
    """Read a binary 16-bit PGM; returns (levels, scale)."""
    data = Path(path).read_bytes()
    tokens, comments, offset = _pgm_tokens(data)
    if tokens[0] != b"P5":
        raise DepthFormatError(f"expected P5 magic, found {tokens[0]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise DepthFormatError("non-integer PGM header field") from exc
    if width <= 0 or height <= 0 or not 0 < maxval <= 65535:
        raise DepthFormatError("invalid PGM dimensions or maxval")
    scale = 1.0
    for comment in comments:
        m = re.match(r"scale\s*=\s*(\S+)", comment)
        if m:
            try:
                scale = float(m.group(1))
            except ValueError as exc:
                raise DepthFormatError(f"bad scale comment {comment!r}") from exc
    if not (math.isfinite(scale) and scale > 0):
        raise DepthFormatError("scale must be positive and finite")
    dtype = ">u2" if maxval > 255 else "u1"
    itemsize = 2 if maxval > 255 else 1
    raster = data[offset:]
    if len(raster) != width * height * itemsize:
        raise DepthFormatError(
            f"expected {width * height} samples, found {len(raster) // itemsize}"
        )
    levels = np.frombuffer(raster, dtype=dtype).reshape(height, width).astype(np.int64)
    return levels, scale


def write_pgm16(path, levels: np.ndarray, scale: float | None = None) -> None:
    """Write integer levels as a binary 16-bit PGM (maxval 65535)."""
    levels = np.asarray(levels)
    if levels.ndim != 2:
        raise ValueError("levels must be 2-D")
    if levels.min(initial=0) < 0 or levels.max(initial=0) > 65535:
        raise ValueError("levels out of 16-bit range")
    h, w = levels.shape
    header = "P5\n"
    if scale is not None:
        header += f"# scale={scale:.9g}\n"
    header += f"{w} {h}\n65535\n"
    Path(path).write_bytes(header.encode("ascii") + levels.astype(">u2").tobytes())


def _check_samples(values: np.ndarray) -> None:
    finite = values[np.isfinite(values)]
    if np.any(finite < 0):
        raise DepthFormatError("negative depth sample")
    if np.any(np.isinf(values)):
        raise DepthFormatError("infinite depth sample")


def load_depth_map(path, format: str | None = None) -> DepthMap:
    """Load a depth map from ``pgm16``, ``csv`` or ``rawf32``.

    The format is inferred from the extension when not given. Level 0 is the
    invalid sentinel for PGM; NaN is the sentinel for the float formats.
    """
    path = Path(path)
    if format is None:
        format = _format_from_suffix(path)
    if format == "pgm16":
        levels, scale = read_pgm16(path)
        valid = levels != 0
        return DepthMap(levels * scale, valid)
    if format == "csv":
        rows = []
        for lineno, line in enumerate(path.read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                rows.append([float(tok) if tok.strip() else math.nan for tok in line.split(",")])
            except ValueError as exc:
                raise DepthFormatError(f"line {lineno}: {exc}") from exc
        if not rows:
            raise DepthFormatError("empty CSV depth map")
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            raise DepthFormatError("ragged CSV rows")
        arr = np.array(rows, dtype=np.float64)
        _check_samples(arr)
        return DepthMap.from_array(arr)
    if format == "rawf32":
        data = path.read_bytes()
        if len(data) < 16 or data[:4] != RAW_MAGIC:
            raise DepthFormatError("missing DPTH header")
        width, height, _ = struct.unpack("<III", data[4:16])
        body = data[16:]
        if len(body) % 4 or len(body) // 4 != width * height:
            raise DepthFormatError(
                f"declared {width}x{height} but found {len(body) / 4:g} floats"
            )
        arr = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(height, width)
        _check_samples(arr)
        return DepthMap.from_array(arr)
    raise ValueError(f"unknown depth format {format!r}")


def default_pgm_scale(depth: DepthMap) -> float:
    """Millimetre quantization unless the range does not fit in 16 bits."""
    top = float(depth.depth.max(initial=0.0))
    return 1e-3 if top <= 65535e-3 else top / 65535.0


def save_depth_map(depth: DepthMap, path, format: str | None = None, scale: float | None = None) -> None:
    """Write a depth map; invalid pixels get the format's sentinel."""
    path = Path(path)
    if format is None:
        format = _format_from_suffix(path)
    if format == "pgm16":
        if scale is None:
            scale = default_pgm_scale(depth)
        levels = np.rint(depth.depth / scale).astype(np.int64)
        levels = np.where(depth.valid, levels, 0)
        lost = int(np.count_nonzero(depth.valid & (levels == 0)))
        if lost:
            logger.warning("%d valid samples quantized to the invalid level 0", lost)
        write_pgm16(path, np.clip(levels, 0, 65535), scale)
    elif format == "csv":
        arr = depth.as_nan()
        # repr is the shortest string that round-trips a float64 exactly
        lines = [",".join(repr(float(v)) for v in row) for row in arr]
        path.write_text("\n".join(lines) + "\n")
    elif format == "rawf32":
        header = RAW_MAGIC + struct.pack("<III", depth.width, depth.height, 0)
        path.write_bytes(header + depth.as_nan().astype("<f4").tobytes())
    else:
        raise ValueError(f"unknown depth format {format!r}")


def _format_from_suffix(path: Path) -> str:
    suffix = path.suffix.lower()
    if suffix in (".pgm", ".pnm"):
        return "pgm16"
    if suffix == ".csv":
        return "csv"
    if suffix in (".raw", ".f32", ".rawf32", ".dpth"):
        return "rawf32"
    raise ValueError(f"cannot infer depth format from {path.name!r}")


# ---------------------------------------------------------------------------
# Fixtures


def _fixture_focal(kind: str, width: int, height: int, params: dict) -> float:
    if "focal" in params:
        return float(params["focal"])
    background = float(params.get("background", 10.0))
    radius = float(params.get("radius", 1.0))
    if kind == "sphere_bump":
        return min(width, height) * background / (4.0 * radius)
    if kind == "two_objects":
        return min(width, height) * background / (8.0 * radius)
    return float(max(width, height))


def fixture_intrinsics(kind: str, width: int, height: int, params: dict | None = None) -> CameraIntrinsics:
    """Intrinsics consistent with :func:`generate_fixture` for the same arguments.

    The principal point sits on pixel ``(width // 2, height // 2)``.
    """
    params = params or {}
    f = _fixture_focal(kind, width, height, params)
    return CameraIntrinsics(f, f, float(width // 2), float(height // 2))


def _raycast_sphere(width, height, intr: CameraIntrinsics, center_px, radius, background):
    u, v = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    dx = (u - intr.cx) / intr.fx
    dy = (v - intr.cy) / intr.fy
    cu, cv = center_px
    c = np.array([(cu - intr.cx) * background / intr.fx, (cv - intr.cy) * background / intr.fy, background])
    dd = dx * dx + dy * dy + 1.0
    dc = dx * c[0] + dy * c[1] + c[2]
    disc = dc * dc - dd * (c @ c - radius * radius)
    hit = disc >= 0
    t = (dc - np.sqrt(np.where(hit, disc, 0.0))) / dd
    # ray direction has unit z, so t is the z-depth
    return np.where(hit, np.minimum(t, background), background)


def generate_fixture(kind: str, width: int, height: int, params: dict | None = None) -> DepthMap:
    """Deterministic analytic depth maps used as test oracles.

    Kinds and parameters (defaults in brackets):

    - ``plane``: ``depth`` [5].
    - ``ramp``: ``depth = c + a*x + b*y`` with ``a`` [1], ``b`` [0], ``c`` [1] (keeps every pixel in front of the camera).
    - ``step``: ``d1`` [2] for ``x < split``, ``d2`` [6] elsewhere; ``split`` [width // 2].
    - ``sphere_bump``: a sphere of ``radius`` [1] centred at depth ``background`` [10]
      on the ray through pixel ``center`` [(width//2, height//2)], ray-cast with
      :func:`fixture_intrinsics`; the visible front half protrudes from the back plane.
    - ``two_objects``: two such bumps centred at ``centers``
      [(width//4, height//2), (3*width//4, height//2)].
    """
    params = dict(params or {})
    if kind not in FIXTURE_KINDS:
        raise ValueError(f"unknown fixture kind {kind!r}")
    if width < 2 or height < 2:
        raise ValueError("fixtures need width, height >= 2")
    x, y = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    if kind == "plane":
        d = float(params.get("depth", 5.0))
        if d < 0:
            raise ValueError("plane depth must be >= 0")
        arr = np.full((height, width), d)
    elif kind == "ramp":
        a, b, c = (float(params.get(k, dflt)) for k, dflt in (("a", 1.0), ("b", 0.0), ("c", 1.0)))
        arr = c + a * x + b * y
        if arr.min() < 0:
            raise ValueError("ramp parameters produce negative depth")
    elif kind == "step":
        d1, d2 = float(params.get("d1", 2.0)), float(params.get("d2", 6.0))
        split = int(params.get("split", width // 2))
        if d1 < 0 or d2 < 0:
            raise ValueError("step depths must be >= 0")
        if not 0 < split < width:
            raise ValueError("split must fall strictly inside the image")
        arr = np.where(x < split, d1, d2)
    else:
        radius = float(params.get("radius", 1.0))
        background = float(params.get("background", 10.0))
        if radius <= 0:
            raise ValueError("sphere radius must be positive")
        if background <= radius:
            raise ValueError("background must lie beyond the sphere radius")
        intr = fixture_intrinsics(kind, width, height, params)
        if kind == "sphere_bump":
            centers = [tuple(params.get("center", (width // 2, height // 2)))]
        else:
            centers = [
                tuple(c)
                for c in params.get("centers", ((width // 4, height // 2), (3 * width // 4, height // 2)))
            ]
        arr = np.full((height, width), background)
        for center in centers:
            arr = np.minimum(arr, _raycast_sphere(width, height, intr, center, radius, background))
    return DepthMap(arr, np.ones((height, width), dtype=bool))


# ---------------------------------------------------------------------------
# Filtering and statistics


def median_filter(depth: DepthMap, window: int) -> DepthMap:
    """Median of valid samples in a ``window x window`` neighbourhood.

    Borders are clamped (replicated). Invalid pixels stay invalid and are not
    used as samples.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be an odd integer >= 3")
    if window > max(depth.width, depth.height):
        raise ValueError("window larger than the depth map")
    r = window // 2
    h, w = depth.shape
    padded = np.pad(depth.as_nan(), r, mode="edge")
    stack = np.empty((window * window, h, w))
    i = 0
    for dy in range(window):
        for dx in range(window):
            stack[i] = padded[dy : dy + h, dx : dx + w]
            i += 1
    out = depth.depth.copy()
    mask = depth.valid
    if mask.any():
        out[mask] = np.nanmedian(stack[:, mask], axis=0)
    return DepthMap(out, mask)


def depth_histogram(values: np.ndarray, lo: float, hi: float, bins: int = HIST_BINS) -> np.ndarray:
    """Equal-width bin indices over [lo, hi]; the top edge falls in the last bin."""
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.int64)
    idx = np.floor((values - lo) / (hi - lo) * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def depth_stats(depth: DepthMap) -> DepthStats:
    vals = depth.depth[depth.valid]
    frac = vals.size / depth.depth.size
    if vals.size == 0:
        nan = math.nan
        return DepthStats(nan, nan, nan, nan, np.zeros(HIST_BINS, dtype=np.int64), 0.0)
    lo, hi = float(vals.min()), float(vals.max())
    mean = float(vals.mean())
    std = float(vals.std())
    hist = np.bincount(depth_histogram(vals, lo, hi), minlength=HIST_BINS)
    return DepthStats(lo, hi, min(max(mean, lo), hi), std, hist, frac)


def depth_gradients(depth: DepthMap) -> GradientField:
    """Central differences in the interior, one-sided differences on borders."""
    h, w = depth.shape
    if h < 3 or w < 3:
        raise ValueError("gradients need a map of at least 3x3")
    d = depth.depth
    m = depth.valid
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    vx = np.zeros((h, w), dtype=bool)
    vy = np.zeros((h, w), dtype=bool)

    gx[:, 1:-1] = (d[:, 2:] - d[:, :-2]) / 2.0
    vx[:, 1:-1] = m[:, 2:] & m[:, :-2] & m[:, 1:-1]
    gx[:, 0] = d[:, 1] - d[:, 0]
    vx[:, 0] = m[:, 1] & m[:, 0]
    gx[:, -1] = d[:, -1] - d[:, -2]
    vx[:, -1] = m[:, -1] & m[:, -2]

    gy[1:-1, :] = (d[2:, :] - d[:-2, :]) / 2.0
    vy[1:-1, :] = m[2:, :] & m[:-2, :] & m[1:-1, :]
    gy[0, :] = d[1, :] - d[0, :]
    vy[0, :] = m[1, :] & m[0, :]
    gy[-1, :] = d[-1, :] - d[-2, :]
    vy[-1, :] = m[-1, :] & m[-2, :]

    valid = vx & vy
    gx = np.where(valid, gx, 0.0)
    gy = np.where(valid, gy, 0.0)
    return GradientField(gx, gy, np.hypot(gx, gy), valid)


def detect_boundaries(grad: GradientField, threshold: float) -> np.ndarray:
    """Boolean mask of pixels whose gradient magnitude exceeds ``threshold``."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    return grad.valid & (grad.magnitude > threshold)


def _local_maxima(mag: np.ndarray, valid: np.ndarray) -> np.ndarray:
    h, w = mag.shape
    m = np.where(valid, mag, -np.inf)
    padded = np.pad(m, 1, mode="constant", constant_values=-np.inf)
    keep = valid & (mag > 0)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            keep &= m >= padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
    return keep


def detect_keypoints(depth: DepthMap, max_count: int) -> list[Keypoint]:
    """Gradient-magnitude local maxima under 3x3 non-maximum suppression.

    Ordered by descending score, ties broken by (y, x).
    """
    if max_count < 0:
        raise ValueError("max_count must be >= 0")
    if max_count == 0:
        return []
    grad = depth_gradients(depth)
    ys, xs = np.nonzero(_local_maxima(grad.magnitude, grad.valid))
    scores = grad.magnitude[ys, xs]
    order = np.lexsort((xs, ys, -scores))[:max_count]
    return [Keypoint(int(xs[i]), int(ys[i]), float(scores[i])) for i in order]


# ---------------------------------------------------------------------------
# Keypoint clustering and budget allocation


def _farthest_point_init(pts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    chosen = [int(rng.integers(len(pts)))]
    dist = np.sum((pts - pts[chosen[0]]) ** 2, axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.sum((pts - pts[nxt]) ** 2, axis=1))
    return pts[chosen].copy()


def largest_remainder(total: int, weights) -> list[int]:
    """Split ``total`` integer units proportionally to ``weights`` exactly.

    Floors of the exact quotas are handed out first; leftover units go to the
    largest fractional remainders, earlier entries winning ties.
    """
    weights = [int(w) for w in weights]
    wsum = sum(weights)
    if wsum <= 0:
        raise ValueError("weights must have a positive sum")
    # integer arithmetic keeps the remainders exact
    floors = [total * w // wsum for w in weights]
    rems = [total * w % wsum for w in weights]
    left = total - sum(floors)
    order = sorted(range(len(weights)), key=lambda i: (-rems[i], i))
    for i in order[:left]:
        floors[i] += 1
    return floors


def kmeans(pts: np.ndarray, k: int, seed: int, max_iter: int = 100):
    """Lloyd's algorithm with seeded farthest-point initialization.

    Returns (centers, assignments, wcss_history).
    """
    pts = np.asarray(pts, dtype=np.float64)
    rng = np.random.default_rng(seed)
    centers = _farthest_point_init(pts, k, rng)
    assign = None
    history: list[float] = []
    for _ in range(max_iter):
        d2 = np.sum((pts[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new = np.argmin(d2, axis=1)
        # reseed empty clusters with the point farthest from its own center
        for c in range(k):
            if not np.any(new == c):
                sizes = np.bincount(new, minlength=k)
                own = np.where(sizes[new] > 1, np.sum((pts - centers[new]) ** 2, axis=1), -1.0)
                far = int(np.argmax(own))
                if own[far] < 0:
                    continue
                new[far] = c
                centers[c] = pts[far]
        history.append(float(np.sum((pts - centers[new]) ** 2)))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for c in range(k):
            members = pts[assign == c]
            if len(members):
                centers[c] = members.mean(axis=0)
        history.append(float(np.sum((pts - centers[assign]) ** 2)))
    return centers, assign, history


def allocate_budget(keypoints, k: int, total_budget: int, seed: int = 0) -> ClusterBudget:
    """Cluster keypoints by position and share ``total_budget`` by cluster size."""
    if not keypoints:
        raise ValueError("no keypoints to cluster")
    if k < 1 or k > len(keypoints):
        raise ValueError("need 1 <= K <= number of keypoints")
    if total_budget < 0:
        raise ValueError("total_budget must be >= 0")
    pts = np.array([(kp.x, kp.y) for kp in keypoints], dtype=np.float64)
    centers, assign, history = kmeans(pts, k, seed)
    counts = np.bincount(assign, minlength=k).tolist()
    budget = largest_remainder(total_budget, counts)
    return ClusterBudget(centers, assign, budget, counts, history)
