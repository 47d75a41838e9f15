"""Cameras, frames, scenes, the on-disk scene format and a synthetic street generator.

Pixel convention: the center of the pixel at row ``r``, column ``c`` sits at
continuous image coordinates ``(u, v) = (c, r)``. Depth is always the
camera-space ``z`` coordinate in meters, never the ray length.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

DEPTH_MAGIC = b"ADGD"
_DEPTH_HEADER = struct.Struct("<4sII")


class SceneError(Exception):
    """Base class for scene model and file format errors."""


class ValidationError(SceneError, ValueError):
    pass


class SceneFormatError(SceneError):
    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = Path(path)
        self.reason = reason


class ConsistencyError(SceneError):
    pass


class DomainError(SceneError, ValueError):
    pass


class BehindCameraError(SceneError, ValueError):
    pass


@dataclass(eq=False)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    w2c: np.ndarray
    width: int
    height: int
    near: float = 2.0
    far: float = 100.0

    def __post_init__(self):
        self.w2c = np.array(self.w2c, dtype=np.float64).reshape(4, 4)
        self.width = int(self.width)
        self.height = int(self.height)
        self.validate()

    def validate(self, tol=1e-6):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image")
        if not (0 < self.near < self.far):
            raise ValidationError(f"need 0 < near < far, got near={self.near}, far={self.far}")
        if not np.all(np.isfinite(self.w2c)):
            raise ValidationError("w2c has non-finite entries")
        if not np.allclose(self.w2c[3], [0.0, 0.0, 0.0, 1.0], atol=tol, rtol=0):
            raise ValidationError(f"w2c last row must be (0, 0, 0, 1), got {self.w2c[3]}")
        rot = self.w2c[:3, :3]
        if np.abs(rot @ rot.T - np.eye(3)).max() > tol:
            raise ValidationError("w2c rotation block is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > tol:
            raise ValidationError("w2c rotation block has determinant != +1")

    @property
    def rotation(self) -> np.ndarray:
        return self.w2c[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.w2c[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def shifted(self, dx: float) -> "CameraModel":
        """Same camera translated by ``dx`` meters along its own x axis."""
        w2c = self.w2c.copy()
        w2c[0, 3] -= dx
        return replace(self, w2c=w2c)

    def to_dict(self) -> dict:
        return {
            "fx": float(self.fx), "fy": float(self.fy),
            "cx": float(self.cx), "cy": float(self.cy),
            "width": self.width, "height": self.height,
            "near": float(self.near), "far": float(self.far),
            "w2c": [float(x) for x in self.w2c.ravel()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"], w2c=d["w2c"],
                   width=d["width"], height=d["height"], near=d["near"], far=d["far"])

    def __eq__(self, other):
        if not isinstance(other, CameraModel):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def look_camera(position, yaw, *, width, height, fx, fy=None, cx=None, cy=None,
                near=2.0, far=100.0) -> CameraModel:
    """Level camera in a z-up world, looking along +y rotated by ``yaw`` radians about z."""
    fy = fx if fy is None else fy
    cx = (width - 1) / 2.0 if cx is None else cx
    cy = (height - 1) / 2.0 if cy is None else cy
    right = np.array([np.cos(yaw), -np.sin(yaw), 0.0])
    down = np.array([0.0, 0.0, -1.0])
    forward = np.array([np.sin(yaw), np.cos(yaw), 0.0])
    c2w_rot = np.stack([right, down, forward], axis=1)
    w2c = np.eye(4)
    w2c[:3, :3] = c2w_rot.T
    w2c[:3, 3] = -c2w_rot.T @ np.asarray(position, dtype=np.float64)
    return CameraModel(fx=fx, fy=fy, cx=cx, cy=cy, w2c=w2c, width=width, height=height,
                       near=near, far=far)


def unproject(u, v, d, cam: CameraModel) -> np.ndarray:
    """Lift pixel coordinates at camera depth ``d`` to world points, shape ``(..., 3)``."""
    u, v, d = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (u, v, d)))
    if np.any(~(d > 0)):
        raise DomainError("depth must be strictly positive")
    cam_pts = np.stack([(u - cam.cx) / cam.fx * d, (v - cam.cy) / cam.fy * d, d], axis=-1)
    return (cam_pts - cam.translation) @ cam.rotation


def project(p, cam: CameraModel):
    """Project world points to ``(u, v, depth)``; raises if any point is not in front."""
    p = np.asarray(p, dtype=np.float64)
    cam_pts = p @ cam.rotation.T + cam.translation
    z = cam_pts[..., 2]
    if np.any(~(z > 0)):
        raise BehindCameraError("point is behind the camera (camera-space z <= 0)")
    u = cam.fx * cam_pts[..., 0] / z + cam.cx
    v = cam.fy * cam_pts[..., 1] / z + cam.cy
    return u, v, z


def pixel_rays(cam: CameraModel, supersample: int = 1):
    """World-space ray origin and directions scaled so the ray parameter equals camera z.

    Returns ``(origin, dirs)`` with ``dirs`` of shape ``(H, W, s*s, 3)``. For odd
    ``supersample`` the middle sample is the exact pixel center.
    """
    s = supersample
    offs = (np.arange(s) - (s - 1) / 2.0) / s
    rows = np.arange(cam.height)[:, None, None, None] + offs[None, None, :, None]
    cols = np.arange(cam.width)[None, :, None, None] + offs[None, None, None, :]
    rows, cols = np.broadcast_arrays(rows, cols)
    x = (cols - cam.cx) / cam.fx
    y = (rows - cam.cy) / cam.fy
    cam_dirs = np.stack([x, y, np.ones_like(x)], axis=-1).reshape(cam.height, cam.width, s * s, 3)
    return cam.center, cam_dirs @ cam.rotation


@dataclass(eq=False)
class Frame:
    image: np.ndarray
    sparse_depth: np.ndarray
    camera: CameraModel

    def __post_init__(self):
        self.validate()

    def validate(self):
        cam = self.camera
        if self.image.shape != (cam.height, cam.width, 3):
            raise ConsistencyError(
                f"image shape {self.image.shape} != camera {(cam.height, cam.width, 3)}")
        if self.sparse_depth.shape != (cam.height, cam.width):
            raise ConsistencyError(
                f"depth shape {self.sparse_depth.shape} != camera {(cam.height, cam.width)}")
        if self.image.min(initial=0.0) < 0 or self.image.max(initial=0.0) > 1:
            raise ValidationError("image values must lie in [0, 1]")
        d = self.sparse_depth[self.sparse_depth != 0]
        if d.size and (d.min() <= cam.near or d.max() >= cam.far):
            raise ValidationError("sparse depth values must be 0 or inside (near, far)")

    @property
    def shape(self):
        return self.image.shape[:2]


@dataclass
class SyntheticSceneConfig:
    seed: int = 0
    n_frames: int = 3
    resolution: tuple = (64, 96)
    lidar_density: float = 0.05
    forward_step_m: float = 1.0
    n_boxes: int = 8
    n_poles: int = 6
    ground_texture_freq: float = 0.5
    yaw_jitter_deg: float = 1.0
    camera_height: float = 1.6
    focal_scale: float = 0.7
    near: float = 2.0
    far: float = 100.0
    supersample: int = 3
    sparsify_pattern: str = "scanline"

    def __post_init__(self):
        self.resolution = tuple(int(x) for x in self.resolution)
        self.validate()

    def validate(self):
        if not 0 < self.lidar_density <= 1:
            raise ValidationError(f"lidar_density must be in (0, 1], got {self.lidar_density}")
        if self.n_frames < 2:
            raise ValidationError(f"n_frames must be >= 2, got {self.n_frames}")
        if len(self.resolution) != 2 or min(self.resolution) < 1:
            raise ValidationError(f"bad resolution {self.resolution}")
        if self.sparsify_pattern not in ("scanline", "uniform"):
            raise ValidationError(f"unknown sparsify pattern {self.sparsify_pattern!r}")
        if self.supersample < 1:
            raise ValidationError("supersample must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSceneConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown synthetic scene keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Scene:
    frames: list
    id: str
    dense_depth: Optional[list] = None
    synthetic: Optional[SyntheticSceneConfig] = None

    def __post_init__(self):
        if self.frames:
            shape = self.frames[0].shape
            for f in self.frames:
                if f.shape != shape:
                    raise ConsistencyError(f"scene {self.id}: frames differ in resolution")
        if self.dense_depth is not None:
            if len(self.dense_depth) != len(self.frames):
                raise ConsistencyError(f"scene {self.id}: dense depth count != frame count")
            for f, d in zip(self.frames, self.dense_depth):
                if d.shape != f.shape:
                    raise ConsistencyError(f"scene {self.id}: dense depth shape mismatch")

    def __len__(self):
        return len(self.frames)

    def world(self) -> Optional["SyntheticWorld"]:
        """The procedural world behind a synthetic scene, for rendering extra GT views."""
        return None if self.synthetic is None else SyntheticWorld.from_config(self.synthetic)


# --------------------------------------------------------------------------------------
# Synthetic street generator


@dataclass
class Box:
    lo: np.ndarray
    hi: np.ndarray
    color: np.ndarray
    kind: str = "building"  # building | pole


@dataclass
class SyntheticWorld:
    """Ground plane at z=0, axis-aligned boxes and poles, and a sky backdrop at y=backdrop_y."""

    boxes: list
    backdrop_y: float
    texture_freq: float
    cameras: list = field(default_factory=list)

    @classmethod
    def from_config(cls, cfg: SyntheticSceneConfig) -> "SyntheticWorld":
        rng = np.random.default_rng(cfg.seed)
        h, w = cfg.resolution
        fx = cfg.focal_scale * w
        span = cfg.forward_step_m * (cfg.n_frames - 1)

        boxes = []
        for _ in range(cfg.n_boxes):
            side = rng.choice([-1.0, 1.0])
            x0 = side * rng.uniform(4.5, 9.0)
            width = rng.uniform(2.0, 6.0)
            y0 = rng.uniform(6.0, 45.0) + span
            depth = rng.uniform(3.0, 10.0)
            height = rng.uniform(2.0, 14.0)
            xs = sorted([x0, x0 + side * width])
            color = rng.uniform(0.25, 0.85, size=3)
            boxes.append(Box(np.array([xs[0], y0, 0.0]), np.array([xs[1], y0 + depth, height]),
                             color, "building"))
        for _ in range(cfg.n_poles):
            side = rng.choice([-1.0, 1.0])
            x0 = side * rng.uniform(3.8, 4.4)
            y0 = rng.uniform(8.0, 40.0) + span
            r = 0.12
            color = np.array([0.55, 0.55, 0.58]) * rng.uniform(0.8, 1.2)
            boxes.append(Box(np.array([x0 - r, y0 - r, 0.0]), np.array([x0 + r, y0 + r, rng.uniform(4.0, 7.0)]),
                             np.clip(color, 0.0, 1.0), "pole"))

        cameras = []
        for t in range(cfg.n_frames):
            yaw = np.deg2rad(rng.uniform(-cfg.yaw_jitter_deg, cfg.yaw_jitter_deg))
            pos = np.array([0.0, t * cfg.forward_step_m, cfg.camera_height])
            cameras.append(look_camera(pos, yaw, width=w, height=h, fx=fx, near=cfg.near, far=cfg.far))
        backdrop_y = 0.8 * cfg.far
        return cls(boxes=boxes, backdrop_y=backdrop_y, texture_freq=cfg.ground_texture_freq,
                   cameras=cameras)

    def intersect(self, origin, dirs):
        """Nearest hit along rays ``origin + t*dirs``; returns ``(t, prim_id, axis, sign)``.

        ``prim_id`` is -1 for ground, -2 for the backdrop, otherwise a box index.
        ``axis``/``sign`` give the hit face normal for boxes.
        """
        shape = dirs.shape[:-1]
        dirs = dirs.reshape(-1, 3)
        n = dirs.shape[0]
        t_best = np.full(n, np.inf)
        prim = np.full(n, -3, dtype=np.int64)
        axis = np.zeros(n, dtype=np.int64)
        sign = np.zeros(n)

        with np.errstate(divide="ignore", invalid="ignore"):
            t_ground = np.where(dirs[:, 2] < 0, -origin[2] / dirs[:, 2], np.inf)
            hit = t_ground < t_best
            t_best[hit], prim[hit], axis[hit], sign[hit] = t_ground[hit], -1, 2, 1.0

            t_back = np.where(dirs[:, 1] > 0, (self.backdrop_y - origin[1]) / dirs[:, 1], np.inf)
            hit = t_back < t_best
            t_best[hit], prim[hit], axis[hit], sign[hit] = t_back[hit], -2, 1, -1.0

            inv = 1.0 / dirs
            for k, box in enumerate(self.boxes):
                t1 = (box.lo - origin) * inv
                t2 = (box.hi - origin) * inv
                # rays parallel to a slab produce nan when the origin sits on the plane
                tmin = np.nan_to_num(np.minimum(t1, t2), nan=-np.inf)
                tmax = np.nan_to_num(np.maximum(t1, t2), nan=np.inf)
                ax = np.argmax(tmin, axis=1)
                t_near = tmin[np.arange(n), ax]
                t_far = tmax.min(axis=1)
                hit = (t_near <= t_far) & (t_near > 0) & (t_near < t_best)
                t_best[hit] = t_near[hit]
                prim[hit] = k
                axis[hit] = ax[hit]
                sign[hit] = -np.sign(dirs[hit, ax[hit]])
        return (t_best.reshape(shape), prim.reshape(shape), axis.reshape(shape), sign.reshape(shape))

    def shade(self, points, prim, axis, sign):
        out = np.zeros(points.shape, dtype=np.float64)
        x, y, z = points[..., 0], points[..., 1], points[..., 2]

        g = prim == -1
        if np.any(g):
            f = self.texture_freq
            gx, gy = x[g], y[g]
            base = np.where(np.abs(gx) > 4.0, 0.55, 0.33)[:, None] * np.array([1.0, 0.97, 0.93])
            tex = 1.0 + 0.15 * np.sin(2 * np.pi * f * gx) * np.sin(2 * np.pi * f * gy)
            col = base * tex[:, None]
            lane = (np.abs(gx) < 0.12) & (np.mod(gy, 6.0) < 3.0)
            edge = np.abs(np.abs(gx) - 3.6) < 0.12
            col[lane] = [0.9, 0.9, 0.88]
            col[edge] = [0.85, 0.75, 0.3]
            out[g] = col

        b = prim == -2
        if np.any(b):
            s = np.clip(z[b] / 40.0, 0.0, 1.0)[:, None]
            out[b] = (1 - s) * np.array([0.75, 0.82, 0.92]) + s * np.array([0.35, 0.5, 0.85])

        for k, box in enumerate(self.boxes):
            m = prim == k
            if not np.any(m):
                continue
            ax = axis[m]
            light = np.select([ax == 2, ax == 0], [1.0, 0.78], default=0.92)
            col = box.color[None, :] * light[:, None]
            if box.kind == "building":
                horiz = np.where(ax == 0, y[m], x[m])
                win = ((np.mod(horiz, 1.6) > 0.4) & (np.mod(horiz, 1.6) < 1.2)
                       & (np.mod(z[m], 2.4) > 0.9) & (np.mod(z[m], 2.4) < 1.9)
                       & (z[m] > 1.0) & (ax != 2))
                col[win] = col[win] * 0.35 + np.array([0.1, 0.15, 0.25])
            else:
                band = np.mod(z[m], 1.0) < 0.15
                col[band] = col[band] * 0.5
            out[m] = col
        return np.clip(out, 0.05, 0.95)

    def render(self, cam: CameraModel, supersample: int = 3):
        """Anti-aliased image (8-bit quantized, float32) and exact center-ray z-depth (float32)."""
        origin, dirs = pixel_rays(cam, supersample)
        t, prim, axis, sign = self.intersect(origin, dirs)
        points = origin + t[..., None] * dirs
        colors = self.shade(points, prim, axis, sign)
        image = quantize_image(colors.mean(axis=2))
        depth = t[:, :, (supersample * supersample) // 2].astype(np.float32)
        return image, depth


def quantize_image(image) -> np.ndarray:
    """Round to the 8-bit grid so a PNG roundtrip is lossless."""
    q = np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    return _from_uint8(q)


def _from_uint8(q):
    return q.astype(np.float32) / np.float32(255.0)


def sparsify_depth(dense, density, pattern="scanline", seed=0) -> np.ndarray:
    """Keep roughly ``density`` of the valid (nonzero) pixels of ``dense``, zero the rest.

    ``scanline`` keeps pixels on evenly spaced rows first (LiDAR-like), ``uniform``
    samples uniformly among all valid pixels. Retained values are copied verbatim.
    """
    if not 0 < density <= 1:
        raise ValueError(f"density must be in (0, 1], got {density}")
    dense = np.asarray(dense)
    if density == 1:
        return dense.copy()
    rng = np.random.default_rng(seed)
    valid = np.flatnonzero(dense.ravel() != 0)
    n_keep = int(round(density * valid.size))
    if pattern == "uniform":
        keep = rng.choice(valid, size=n_keep, replace=False)
    elif pattern == "scanline":
        step = max(1, int(np.sqrt(1.0 / density)))
        phase = rng.integers(step)
        on_line = (valid // dense.shape[1]) % step == phase
        pool, rest = valid[on_line], valid[~on_line]
        if pool.size >= n_keep:
            keep = rng.choice(pool, size=n_keep, replace=False)
        else:
            keep = np.concatenate([pool, rng.choice(rest, size=n_keep - pool.size, replace=False)])
    else:
        raise ValueError(f"unknown sparsify pattern {pattern!r}")
    out = np.zeros_like(dense)
    out.ravel()[keep] = dense.ravel()[keep]
    return out


def generate_synthetic_scene(cfg: SyntheticSceneConfig, scene_id: Optional[str] = None) -> Scene:
    world = SyntheticWorld.from_config(cfg)
    frames, dense = [], []
    for t, cam in enumerate(world.cameras):
        image, depth = world.render(cam, cfg.supersample)
        sparse = sparsify_depth(depth, cfg.lidar_density, cfg.sparsify_pattern,
                                seed=cfg.seed * 1000 + t)
        frames.append(Frame(image=image, sparse_depth=sparse, camera=cam))
        dense.append(depth)
    return Scene(frames=frames, id=scene_id or f"synth{cfg.seed:04d}", dense_depth=dense,
                 synthetic=cfg)


# --------------------------------------------------------------------------------------
# On-disk format


def write_depth(path, depth):
    depth = np.ascontiguousarray(depth, dtype="<f4")
    if depth.ndim != 2:
        raise ConsistencyError(f"depth raster must be 2-D, got shape {depth.shape}")
    h, w = depth.shape
    Path(path).write_bytes(_DEPTH_HEADER.pack(DEPTH_MAGIC, w, h) + depth.tobytes())


def read_depth(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _DEPTH_HEADER.size:
        raise SceneFormatError(path, "file shorter than ADGD header")
    magic, w, h = _DEPTH_HEADER.unpack_from(data)
    if magic != DEPTH_MAGIC:
        raise SceneFormatError(path, f"bad magic {magic!r}")
    expected = _DEPTH_HEADER.size + 4 * w * h
    if len(data) != expected:
        raise SceneFormatError(path, f"expected {expected} bytes for {w}x{h}, found {len(data)}")
    arr = np.frombuffer(data, dtype="<f4", offset=_DEPTH_HEADER.size).reshape(h, w)
    return arr.astype(np.float32)


def write_image(path, image):
    q = np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(path)


def read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            q = np.asarray(im.convert("RGB"))
    except (OSError, SyntaxError) as exc:
        raise SceneFormatError(path, f"unreadable PNG ({exc})") from exc
    return _from_uint8(q)


def write_camera(path, cam: CameraModel):
    Path(path).write_text(json.dumps(cam.to_dict(), indent=1))


def read_camera(path) -> CameraModel:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SceneFormatError(path, f"invalid JSON ({exc})") from exc
    missing = {"fx", "fy", "cx", "cy", "width", "height", "near", "far", "w2c"} - set(d)
    if missing:
        raise SceneFormatError(path, f"missing camera keys {sorted(missing)}")
    if len(d["w2c"]) != 16:
        raise SceneFormatError(path, "w2c must have 16 entries")
    try:
        return CameraModel.from_dict(d)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def save_scene(scene: Scene, root) -> Path:
    """Write ``scene`` under ``root/<id>/``; returns the scene directory."""
    sdir = Path(root) / scene.id
    fdir = sdir / "frames"
    fdir.mkdir(parents=True, exist_ok=True)
    for i, fr in enumerate(scene.frames):
        write_image(fdir / f"{i:04d}.image.png", fr.image)
        write_depth(fdir / f"{i:04d}.depth.adgd", fr.sparse_depth)
        write_camera(fdir / f"{i:04d}.camera.json", fr.camera)
        if scene.dense_depth is not None:
            write_depth(fdir / f"{i:04d}.dense_depth.adgd", scene.dense_depth[i])
    meta = {"id": scene.id, "n_frames": len(scene.frames),
            "synthetic": None if scene.synthetic is None else asdict(scene.synthetic)}
    (sdir / "scene.json").write_text(json.dumps(meta, indent=1))
    return sdir


def load_scene(path) -> Scene:
    sdir = Path(path)
    fdir = sdir / "frames"
    if not fdir.is_dir():
        raise FileNotFoundError(f"scene directory {sdir} has no frames/ subdirectory")
    meta = {}
    if (sdir / "scene.json").exists():
        meta = json.loads((sdir / "scene.json").read_text())
    cams = sorted(fdir.glob("*.camera.json"))
    if not cams:
        raise SceneFormatError(fdir, "no frames found")
    frames, dense = [], []
    for cpath in cams:
        stem = cpath.name.split(".")[0]
        cam = read_camera(cpath)
        image = read_image(fdir / f"{stem}.image.png")
        depth = read_depth(fdir / f"{stem}.depth.adgd")
        frames.append(Frame(image=image, sparse_depth=depth, camera=cam))
        dpath = fdir / f"{stem}.dense_depth.adgd"
        dense.append(read_depth(dpath) if dpath.exists() else None)
    dense_depth = dense if all(d is not None for d in dense) else None
    synth = meta.get("synthetic")
    return Scene(frames=frames, id=meta.get("id", sdir.name), dense_depth=dense_depth,
                 synthetic=None if synth is None else SyntheticSceneConfig.from_dict(synth))


def load_scenes(root) -> list:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"scene root {root} does not exist")
    dirs = sorted(p for p in root.iterdir() if (p / "frames").is_dir())
    if not dirs:
        raise FileNotFoundError(f"no scene directories under {root}")
    return [load_scene(d) for d in dirs]


def scenes_equal(a: Scene, b: Scene) -> bool:
    """Bit-exact comparison of rasters and cameras."""
    if a.id != b.id or len(a.frames) != len(b.frames):
        return False
    for fa, fb in zip(a.frames, b.frames):
        if not (np.array_equal(fa.image, fb.image) and np.array_equal(fa.sparse_depth, fb.sparse_depth)
                and fa.camera == fb.camera and fa.image.dtype == fb.image.dtype):
            return False
    if (a.dense_depth is None) != (b.dense_depth is None):
        return False
    if a.dense_depth is not None:
        return all(np.array_equal(x, y) for x, y in zip(a.dense_depth, b.dense_depth))
    return True
