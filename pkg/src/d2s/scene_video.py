"""Sprite animation inside a depth scene: kinematics, collision, compositing, checks.

Everything works in the camera frame (x right, y down, z = depth forward),
so a footprint pixel covers the scene wherever the object's depth is not
smaller than the scene depth.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from d2s.depth_core import CameraIntrinsics, DepthMap, depth_gradients, load_depth_map

logger = logging.getLogger(__name__)

# camera frame has y pointing down the image, so falling is +y
GRAVITY = (0.0, 9.81, 0.0)
CONTACT_EPS_REL = 1e-6
TRANSPARENT = (255, 0, 255)


class SceneSpecError(ValueError):
    pass


class CollisionError(ValueError):
    """The object's starting pose already penetrates the scene."""


@dataclass(frozen=True)
class Sprite:
    """Billboard footprint: mask, RGB color and per-pixel depth offset."""

    mask: np.ndarray
    color: np.ndarray
    depth_offset: np.ndarray | None = None

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 2 or not mask.any():
            raise ValueError("sprite mask must be a non-empty 2D array")
        color = np.asarray(self.color, dtype=np.uint8)
        if color.shape != mask.shape + (3,):
            raise ValueError("sprite color must be (h, w, 3)")
        off = np.zeros(mask.shape) if self.depth_offset is None else np.asarray(self.depth_offset, dtype=np.float64)
        if off.shape != mask.shape:
            raise ValueError("depth offset must match the mask")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "color", color)
        object.__setattr__(self, "depth_offset", off)

    @classmethod
    def solid(cls, height: int, width: int, color=(255, 0, 0)) -> "Sprite":
        return cls(np.ones((height, width), bool), np.tile(np.array(color, np.uint8), (height, width, 1)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


@dataclass(frozen=True)
class SceneSpec:
    scene_depth: DepthMap
    intrinsics: CameraIntrinsics
    scene_color: np.ndarray | None = None

    def __post_init__(self):
        if self.scene_color is not None:
            color = np.asarray(self.scene_color, dtype=np.uint8)
            if color.shape != self.scene_depth.shape + (3,):
                raise ValueError("scene color must match the depth map size")
            object.__setattr__(self, "scene_color", color)

    @property
    def contact_epsilon(self) -> float:
        d = self.scene_depth.depth[self.scene_depth.valid]
        return CONTACT_EPS_REL * float(d.max() - d.min()) if d.size else 0.0


@dataclass(frozen=True)
class MovingObject:
    sprite: Sprite
    world_size: float
    position: tuple
    velocity: tuple = (0.0, 0.0, 0.0)
    acceleration: tuple = GRAVITY

    def __post_init__(self):
        if not self.world_size > 0:
            raise ValueError("world_size must be positive")
        for name in ("position", "velocity", "acceleration"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 3 or not all(math.isfinite(x) for x in v):
                raise ValueError(f"{name} must be a finite 3-vector")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class Pose:
    t: float
    position: tuple
    collided: bool


@dataclass(frozen=True)
class Trajectory:
    poses: list
    dt: float


@dataclass
class FrameSequence:
    frames: list
    fps: float
    manifest: dict
    depth: list = field(default_factory=list)


@dataclass(frozen=True)
class Footprint:
    """Covered pixels of a sprite at a pose, with per-pixel object depth and color."""

    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    color: np.ndarray
    clipped: bool

    @property
    def empty(self) -> bool:
        return len(self.u) == 0

    def bbox(self) -> list | None:
        if self.empty:
            return None
        return [int(self.u.min()), int(self.v.min()), int(self.u.max()), int(self.v.max())]


def _empty_footprint(clipped=False) -> Footprint:
    z = np.zeros(0, dtype=np.int64)
    return Footprint(z, z, np.zeros(0), np.zeros((0, 3), np.uint8), clipped)


def footprint(scene: SceneSpec, obj: MovingObject, position) -> Footprint:
    """Rasterize the sprite at ``position``.

    The sprite is scaled to fx * world_size / z pixels wide (fy for height,
    keeping its aspect), centred on the projected position and sampled by
    nearest neighbour at integer pixel centres.
    """
    x, y, z = (float(c) for c in position)
    if z <= 0:
        return _empty_footprint(True)
    intr = scene.intrinsics
    h, w = scene.scene_depth.shape
    sh, sw = obj.sprite.shape
    width = intr.fx * obj.world_size / z
    height = intr.fy * obj.world_size * (sh / sw) / z
    uc, vc = intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy
    left, top = uc - width / 2.0, vc - height / 2.0
    u_all = np.arange(math.floor(left), math.ceil(left + width) + 1)
    v_all = np.arange(math.floor(top), math.ceil(top + height) + 1)
    su = np.floor((u_all - left) / width * sw).astype(np.int64)
    sv = np.floor((v_all - top) / height * sh).astype(np.int64)
    u_all, su = u_all[(su >= 0) & (su < sw)], su[(su >= 0) & (su < sw)]
    v_all, sv = v_all[(sv >= 0) & (sv < sh)], sv[(sv >= 0) & (sv < sh)]
    vv, uu = np.meshgrid(v_all, u_all, indexing="ij")
    svv, suu = np.meshgrid(sv, su, indexing="ij")
    on = obj.sprite.mask[svv, suu]
    uu, vv, svv, suu = uu[on], vv[on], svv[on], suu[on]
    inside = (uu >= 0) & (uu < w) & (vv >= 0) & (vv < h)
    clipped = not inside.all()
    uu, vv, svv, suu = uu[inside], vv[inside], svv[inside], suu[inside]
    return Footprint(
        u=uu.astype(np.int64),
        v=vv.astype(np.int64),
        depth=z + obj.sprite.depth_offset[svv, suu],
        color=obj.sprite.color[svv, suu],
        clipped=clipped,
    )


def _projects_inside(scene: SceneSpec, position) -> bool:
    x, y, z = position
    if z <= 0:
        return False
    intr = scene.intrinsics
    u, v = intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy
    h, w = scene.scene_depth.shape
    return -0.5 <= u < w - 0.5 and -0.5 <= v < h - 0.5


def _penetration(scene: SceneSpec, fp: Footprint, eps: float) -> np.ndarray:
    sd = scene.scene_depth
    valid = sd.valid[fp.v, fp.u]
    # invalid scene pixels count as infinitely far
    return valid & (fp.depth >= sd.depth[fp.v, fp.u] - eps)


def collision_test(scene: SceneSpec, obj: MovingObject, position, eps: float | None = None) -> bool:
    """True when any covered pixel puts the object at or behind the scene surface.

    Positions whose centre projects outside the image (or behind the
    camera) never collide.
    """
    if not _projects_inside(scene, position):
        return False
    eps = scene.contact_epsilon if eps is None else eps
    fp = footprint(scene, obj, position)
    return bool(not fp.empty and _penetration(scene, fp, eps).any())


def surface_normal(scene: SceneSpec, u: int, v: int, grad=None) -> np.ndarray:
    """Unit normal of the unprojected depth surface at a pixel, pointing away from the camera."""
    grad = grad if grad is not None else depth_gradients(scene.scene_depth)
    intr = scene.intrinsics
    d = float(scene.scene_depth.depth[v, u])
    gx, gy = float(grad.gx[v, u]), float(grad.gy[v, u])
    du = np.array([(d + (u - intr.cx) * gx) / intr.fx, (v - intr.cy) * gx / intr.fy, gx])
    dv = np.array([(u - intr.cx) * gy / intr.fx, (d + (v - intr.cy) * gy) / intr.fy, gy])
    n = np.cross(du, dv)
    norm = np.linalg.norm(n)
    if norm == 0:
        return np.array([0.0, 0.0, 1.0])
    n /= norm
    return n if n[2] >= 0 else -n


def _contact_pixel(scene: SceneSpec, fp: Footprint, eps: float) -> tuple[int, int]:
    hit = _penetration(scene, fp, eps)
    depth_gap = fp.depth - scene.scene_depth.depth[fp.v, fp.u]
    idx = np.nonzero(hit)[0]
    # deepest penetration, ties to the first pixel in row-major order
    order = np.lexsort((fp.u[idx], fp.v[idx], -depth_gap[idx]))
    i = idx[order[0]]
    return int(fp.u[i]), int(fp.v[i])


def plan_trajectory(scene: SceneSpec, obj: MovingObject, n_frames: int, dt: float) -> Trajectory:
    """Symplectic Euler with slide response.

    A step that would collide is cancelled and the velocity component along
    the contact normal is removed. While resting on a contact, acceleration
    pushing into the surface is cancelled as well, so the object stays put
    rather than creeping back into contact. Poses are flagged ``collided``
    on the collision step and while the contact lasts.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if not dt > 0:
        raise ValueError("dt must be positive")
    eps = scene.contact_epsilon
    p = np.array(obj.position)
    if collision_test(scene, obj, p, eps):
        raise CollisionError("initial pose collides with the scene")
    vel = np.array(obj.velocity)
    acc = np.array(obj.acceleration)
    grad = depth_gradients(scene.scene_depth)
    contact = None
    poses = [Pose(0.0, tuple(p.tolist()), False)]
    for k in range(1, n_frames):
        a = acc
        if contact is not None and a @ contact > 0:
            a = a - (a @ contact) * contact
        vel = vel + a * dt
        if contact is not None and vel @ contact < 0:
            contact = None
        trial = p + vel * dt
        if collision_test(scene, obj, trial, eps):
            fp = footprint(scene, obj, trial)
            u, v = _contact_pixel(scene, fp, eps)
            contact = surface_normal(scene, u, v, grad)
            vel = vel - (vel @ contact) * contact
        else:
            p = trial
        poses.append(Pose(k * dt, tuple(p.tolist()), contact is not None))
    return Trajectory(poses, dt)


# ---------------------------------------------------------------- compositing


def background(scene: SceneSpec) -> np.ndarray:
    """Scene color, or gray levels from depth (near bright, invalid black)."""
    if scene.scene_color is not None:
        return scene.scene_color.copy()
    sd = scene.scene_depth
    h, w = sd.shape
    gray = np.zeros((h, w), dtype=np.uint8)
    vals = sd.depth[sd.valid]
    if vals.size:
        lo, hi = float(vals.min()), float(vals.max())
        if hi > lo:
            gray[sd.valid] = np.round(255.0 * (hi - vals) / (hi - lo)).astype(np.uint8)
        else:
            gray[sd.valid] = 128
    return np.repeat(gray[:, :, None], 3, axis=2)


def compose_frames(scene: SceneSpec, obj: MovingObject, traj: Trajectory, fps: float) -> FrameSequence:
    """Render each pose with a hard-mask depth test (the nearer surface wins)."""
    if not traj.poses:
        raise ValueError("empty trajectory")
    if not fps > 0:
        raise ValueError("fps must be positive")
    bg = background(scene)
    sd = scene.scene_depth
    scene_z = np.where(sd.valid, sd.depth, np.inf)
    frames, depths, meta = [], [], []
    for i, pose in enumerate(traj.poses):
        img = bg.copy()
        zbuf = scene_z.copy()
        fp = footprint(scene, obj, pose.position)
        visible = True
        if not fp.empty:
            nearer = fp.depth < scene_z[fp.v, fp.u]
            img[fp.v[nearer], fp.u[nearer]] = fp.color[nearer]
            zbuf[fp.v[nearer], fp.u[nearer]] = fp.depth[nearer]
            visible = bool(nearer.all())
        frames.append(img)
        depths.append(zbuf)
        meta.append(
            {
                "index": i,
                "t": pose.t,
                "position": list(pose.position),
                "depth": float(pose.position[2]),
                "bbox": fp.bbox(),
                "fully_visible": bool(visible and not fp.clipped and not fp.empty),
                "collided": pose.collided,
            }
        )
    manifest = {"fps": float(fps), "count": len(frames), "duration": len(frames) / float(fps), "frames": meta}
    return FrameSequence(frames, float(fps), manifest, depths)


# ---------------------------------------------------------------- files


def write_ppm(path, img: np.ndarray) -> None:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PPM")
    w, h = int(tokens[1]), int(tokens[2])
    raw = data[pos + 1 : pos + 1 + w * h * 3]
    if len(raw) != w * h * 3:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).copy()


def frame_name(i: int) -> str:
    return f"frame_{i + 1:06d}.ppm"


def write_sequence(seq: FrameSequence, directory) -> Path:
    """Write frame_000001.ppm ... and manifest.json; returns the manifest path."""
    if not seq.frames:
        raise ValueError("empty frame sequence")
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(seq.frames):
        write_ppm(out / frame_name(i), img)
    manifest = dict(seq.manifest)
    manifest["files"] = [frame_name(i) for i in range(len(seq.frames))]
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


def read_sequence(directory) -> FrameSequence:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    frames = [read_ppm(d / name) for name in manifest["files"]]
    return FrameSequence(frames, float(manifest["fps"]), manifest)


# ---------------------------------------------------------------- validation


@dataclass(frozen=True)
class VideoTolerances:
    fps: float = 1e-9
    color_levels: float = 2.0
    size_ratio: float = 0.10


@dataclass
class VideoReport:
    fps_ok: bool
    count_ok: bool
    color_flagged: list
    size_flagged: list
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "fps_ok": self.fps_ok,
            "count_ok": self.count_ok,
            "color_flagged": self.color_flagged,
            "size_flagged": self.size_flagged,
            "passed": self.passed,
            "details": self.details,
        }


def _background_means(seq: FrameSequence) -> np.ndarray:
    means = []
    for img, meta in zip(seq.frames, seq.manifest["frames"]):
        keep = np.ones(img.shape[:2], dtype=bool)
        if meta.get("bbox"):
            u0, v0, u1, v1 = meta["bbox"]
            keep[v0 : v1 + 1, u0 : u1 + 1] = False
        px = img[keep].astype(np.float64)
        means.append(px.mean(axis=0) if len(px) else np.zeros(3))
    return np.array(means)


def validate_sequence(seq: FrameSequence, expected_fps: float, tolerances: VideoTolerances | None = None) -> VideoReport:
    """Frame rate, background color consistency and perspective size checks."""
    tol = tolerances or VideoTolerances()
    if not seq.frames:
        raise ValueError("empty frame sequence")
    m = seq.manifest
    fps_ok = abs(float(m["fps"]) - expected_fps) <= tol.fps and abs(seq.fps - expected_fps) <= tol.fps
    count = int(m["count"])
    count_ok = count == len(seq.frames) == len(m["frames"])
    if "duration" in m:
        count_ok = count_ok and round(float(m["duration"]) * float(m["fps"])) == count

    means = _background_means(seq)
    median = np.median(means, axis=0)
    color_dev = np.abs(means - median).max(axis=1)
    color_flagged = [int(i) for i in np.nonzero(color_dev > tol.color_levels)[0]]

    products, depths = {}, {}
    for meta in m["frames"]:
        if meta.get("bbox") and meta.get("fully_visible", True):
            u0, _, u1, _ = meta["bbox"]
            i = int(meta["index"])
            depths[i] = float(meta["depth"])
            products[i] = (u1 - u0 + 1) * depths[i]
    size_flagged = []
    if products:
        med = float(np.median(list(products.values())))
        z_med = float(np.median(list(depths.values())))
        # a nearest-sampled width is exact to one pixel, i.e. each product to one depth
        size_flagged = sorted(
            i for i, p in products.items() if abs(p - med) > tol.size_ratio * med + depths[i] + z_med
        )
    passed = fps_ok and count_ok and not color_flagged and not size_flagged
    details = {"background_deviation": color_dev.tolist(), "size_products": {str(k): v for k, v in sorted(products.items())}}
    return VideoReport(fps_ok, count_ok, color_flagged, size_flagged, passed, details)


# ---------------------------------------------------------------- scene-spec files


def load_sprite(path) -> Sprite:
    """PPM sprite; pure magenta pixels are transparent."""
    img = read_ppm(path)
    mask = ~np.all(img == np.array(TRANSPARENT, np.uint8), axis=2)
    return Sprite(mask, img)


@dataclass(frozen=True)
class AnimationJob:
    scene: SceneSpec
    obj: MovingObject
    fps: float
    frames: int


def load_scene_spec(path) -> AnimationJob:
    """Read the scene-spec JSON; relative paths resolve against its directory."""
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneSpecError(f"{path}: {exc}") from None
    base = path.parent
    try:
        depth = load_depth_map(base / spec["scene_depth"])
        color = read_ppm(base / spec["scene_color"]) if spec.get("scene_color") else None
        intr = CameraIntrinsics(**{k: float(spec["intrinsics"][k]) for k in ("fx", "fy", "cx", "cy")})
        objects = spec["objects"]
        if len(objects) != 1:
            raise SceneSpecError("exactly one moving object is supported")
        o = objects[0]
        obj = MovingObject(
            sprite=load_sprite(base / o["sprite"]),
            world_size=float(o["world_size"]),
            position=o["position"],
            velocity=o.get("velocity", (0.0, 0.0, 0.0)),
            acceleration=o.get("acceleration", GRAVITY),
        )
        fps, frames = float(spec["fps"]), int(spec["frames"])
    except KeyError as exc:
        raise SceneSpecError(f"{path}: missing key {exc}") from None
    if not fps > 0 or frames < 1:
        raise SceneSpecError("fps must be positive and frames >= 1")
    return AnimationJob(SceneSpec(depth, intr, color), obj, fps, frames)


def animate(job: AnimationJob, out_dir) -> tuple[Path, VideoReport]:
    traj = plan_trajectory(job.scene, job.obj, job.frames, 1.0 / job.fps)
    seq = compose_frames(job.scene, job.obj, traj, job.fps)
    manifest = write_sequence(seq, out_dir)
    return manifest, validate_sequence(seq, job.fps)
