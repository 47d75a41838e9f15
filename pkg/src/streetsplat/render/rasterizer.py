from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from streetsplat.render import _kernels as K
from streetsplat.scene_io import CameraModel

TILE = 16


@dataclass
class GaussianSet:
    """Activated world-space Gaussians; ``quats`` are (w, x, y, z)."""

    means: np.ndarray
    opacities: np.ndarray
    scales: np.ndarray
    quats: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        n = len(self.means)
        shapes = {"means": (n, 3), "opacities": (n,), "scales": (n, 3), "quats": (n, 4), "colors": (n, 3)}
        for name, shape in shapes.items():
            if tuple(getattr(self, name).shape) != shape:
                raise ValueError(f"{name} has shape {tuple(getattr(self, name).shape)}, expected {shape}")

    def __len__(self):
        return len(self.means)

    def numpy(self, dtype=np.float64) -> "GaussianSet":
        conv = lambda x: (x.detach().cpu().numpy() if isinstance(x, torch.Tensor) else np.asarray(x)).astype(dtype)
        return GaussianSet(*(conv(getattr(self, f)) for f in ("means", "opacities", "scales", "quats", "colors")))

    def covariances(self) -> np.ndarray:
        """World covariances R diag(s^2) R^T, shape (N, 3, 3)."""
        g = self.numpy()
        q = g.quats / np.maximum(np.linalg.norm(g.quats, axis=1, keepdims=True), K.QUAT_EPS)
        rot = quat_matrices(q)
        m = rot * g.scales[:, None, :]
        return m @ m.transpose(0, 2, 1)

    def permuted(self, perm) -> "GaussianSet":
        return GaussianSet(*(getattr(self, f)[perm] for f in ("means", "opacities", "scales", "quats", "colors")))

    @classmethod
    def empty(cls) -> "GaussianSet":
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)))


@dataclass
class Projected2DGaussian:
    mean2d: np.ndarray
    cov2d: np.ndarray
    z: float
    radius: float


@dataclass
class RenderOutput:
    color: np.ndarray
    depth: np.ndarray
    alpha: np.ndarray


def quat_matrices(q):
    w, x, y, z = (q[:, i] for i in range(4))
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], 1)


def project_gaussian(mean, quat, scale, cam: CameraModel) -> Optional[Projected2DGaussian]:
    """EWA projection of a single Gaussian; ``None`` when culled.

    Written directly with numpy matrices, independently of the kernel path.
    """
    mean = np.asarray(mean, dtype=np.float64)
    p = cam.rotation @ mean + cam.translation
    x, y, z = p
    if not (cam.near < z < cam.far):
        return None
    q = np.asarray(quat, dtype=np.float64)
    norm = np.linalg.norm(q)
    q = np.array([1.0, 0, 0, 0]) if norm < K.QUAT_EPS else q / norm
    m = quat_matrices(q[None])[0] * np.asarray(scale, dtype=np.float64)[None, :]
    sigma = m @ m.T
    jac = np.array([[cam.fx / z, 0.0, -cam.fx * x / z**2], [0.0, cam.fy / z, -cam.fy * y / z**2]])
    t = jac @ cam.rotation
    cov2d = t @ sigma @ t.T + K.DILATION * np.eye(2)
    radius = K.CULL_SIGMA * np.sqrt(np.linalg.eigvalsh(cov2d).max())
    mean2d = np.array([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy])
    if np.ceil(mean2d[0] - radius) > cam.width - 1 or np.floor(mean2d[0] + radius) < 0:
        return None
    if np.ceil(mean2d[1] - radius) > cam.height - 1 or np.floor(mean2d[1] + radius) < 0:
        return None
    return Projected2DGaussian(mean2d=mean2d, cov2d=cov2d, z=float(z), radius=float(radius))


def _sort_order(g: GaussianSet, xy, depth, valid):
    """Front-to-back order of the valid Gaussians.

    Ties in depth are broken by projected position, opacity and color, then input
    index, so reordering the input never changes the composite.
    """
    idx = np.flatnonzero(valid)
    keys = (idx, g.colors[idx, 2], g.colors[idx, 1], g.colors[idx, 0], g.opacities[idx],
            xy[idx, 1], xy[idx, 0], depth[idx])
    return idx[np.lexsort(keys)]


class _Prepared:
    def __init__(self, g: GaussianSet, cam: CameraModel, tile):
        self.g = g
        self.cam = cam
        self.rw = np.ascontiguousarray(cam.rotation)
        self.tw = np.ascontiguousarray(cam.translation)
        (self.xy, self.conic, self.cov2d, self.depth, self.radius,
         self.valid) = K.preprocess(g.means, g.quats, g.scales, self.rw, self.tw, cam.fx, cam.fy,
                                    cam.cx, cam.cy, cam.near, cam.far, cam.width, cam.height)
        self.order = _sort_order(g, self.xy, self.depth, self.valid)
        self.tile = tile
        self.offsets, self.lists = K.bin_tiles(self.order, self.xy, self.radius, cam.width,
                                               cam.height, tile)


def _as_set(gs: GaussianSet) -> GaussianSet:
    g = gs.numpy(np.float64)
    return GaussianSet(*(np.ascontiguousarray(getattr(g, f))
                         for f in ("means", "opacities", "scales", "quats", "colors")))


def render(gs: GaussianSet, cam: CameraModel, background=(0.0, 0.0, 0.0), tile: int = TILE,
           dtype=np.float64) -> RenderOutput:
    """Tile-based front-to-back compositing of ``gs`` seen from ``cam``."""
    g = _as_set(gs)
    prep = _Prepared(g, cam, tile)
    return _composite(prep, np.asarray(background, dtype=np.float64), dtype)


def _composite(prep: _Prepared, bg, dtype):
    cam = prep.cam
    color = np.empty((cam.height, cam.width, 3))
    depth = np.empty((cam.height, cam.width))
    alpha = np.empty((cam.height, cam.width))
    K.rasterize(prep.offsets, prep.lists, prep.xy, prep.conic, prep.radius, prep.depth,
                prep.g.opacities, prep.g.colors, bg, cam.width, cam.height, prep.tile,
                color, depth, alpha)
    return RenderOutput(color.astype(dtype), depth.astype(dtype), alpha.astype(dtype))


def render_backward(gs: GaussianSet, cam: CameraModel, background, grad_color, grad_depth=None,
                    grad_alpha=None, tile: int = TILE) -> dict:
    """Exact gradients of ``render`` outputs contracted with the upstream gradients.

    Returns a dict with keys ``means, opacities, scales, quats, colors``; culled or
    never-composited Gaussians get zeros.
    """
    g = _as_set(gs)
    prep = _Prepared(g, cam, tile)
    return _backward(prep, np.asarray(background, dtype=np.float64), grad_color, grad_depth, grad_alpha)


def _backward(prep: _Prepared, bg, grad_color, grad_depth, grad_alpha):
    cam, g = prep.cam, prep.g
    n = len(g)
    hw = (cam.height, cam.width)
    grad_color = np.ascontiguousarray(grad_color, dtype=np.float64).reshape(hw + (3,))
    grad_depth = np.zeros(hw) if grad_depth is None else np.ascontiguousarray(grad_depth, dtype=np.float64)
    grad_alpha = np.zeros(hw) if grad_alpha is None else np.ascontiguousarray(grad_alpha, dtype=np.float64)
    g_xy = np.zeros((n, 2))
    g_conic = np.zeros((n, 3))
    g_depth = np.zeros(n)
    g_opac = np.zeros(n)
    g_color = np.zeros((n, 3))
    K.rasterize_backward(prep.offsets, prep.lists, prep.xy, prep.conic, prep.radius, prep.depth,
                         g.opacities, g.colors, bg, cam.width, cam.height, prep.tile,
                         grad_color, grad_depth, grad_alpha, g_xy, g_conic, g_depth, g_opac, g_color)
    g_means = np.zeros((n, 3))
    g_quats = np.zeros((n, 4))
    g_scales = np.zeros((n, 3))
    K.preprocess_backward(g.means, g.quats, g.scales, prep.rw, prep.tw, cam.fx, cam.fy, prep.valid,
                          prep.conic, g_xy, g_conic, g_depth, g_means, g_quats, g_scales)
    return {"means": g_means, "opacities": g_opac, "scales": g_scales, "quats": g_quats,
            "colors": g_color}


def render_reference(gs: GaussianSet, cam: CameraModel, background=(0.0, 0.0, 0.0)) -> RenderOutput:
    """Brute-force oracle: every pixel against every projected Gaussian, dense numpy.

    Uses ``project_gaussian`` for projection and cumulative products for
    transmittance. Memory is O(pixels x Gaussians); meant for small tests.
    """
    g = _as_set(gs)
    h, w = cam.height, cam.width
    bg = np.asarray(background, dtype=np.float64)
    proj = [project_gaussian(g.means[i], g.quats[i], g.scales[i], cam) for i in range(len(g))]
    keep = [i for i, p in enumerate(proj) if p is not None]
    if not keep:
        return RenderOutput(np.broadcast_to(bg, (h, w, 3)).copy(), np.zeros((h, w)), np.zeros((h, w)))
    xy = np.zeros((len(g), 2))
    depth = np.zeros(len(g))
    valid = np.zeros(len(g), dtype=bool)
    for i in keep:
        xy[i], depth[i], valid[i] = proj[i].mean2d, proj[i].z, True
    order = _sort_order(g, xy, depth, valid)

    mean2d = np.stack([proj[i].mean2d for i in order])
    conic = np.linalg.inv(np.stack([proj[i].cov2d for i in order]))
    radius = np.array([proj[i].radius for i in order])
    rows, cols = np.mgrid[0:h, 0:w]
    pix = np.stack([cols.ravel(), rows.ravel()], -1).astype(np.float64)
    delta = pix[:, None, :] - mean2d[None, :, :]
    maha = np.einsum("pni,nij,pnj->pn", delta, conic, delta)
    a = np.minimum(K.ALPHA_MAX, g.opacities[order][None, :] * np.exp(-0.5 * maha))
    a = np.where((np.sum(delta**2, -1) > radius[None, :] ** 2) | (a < K.ALPHA_MIN), 0.0, a)
    trans = np.cumprod(np.concatenate([np.ones((len(pix), 1)), 1.0 - a], axis=1), axis=1)
    wts = a * trans[:, :-1]
    t_end = trans[:, -1]
    color = wts @ g.colors[order] + t_end[:, None] * bg[None, :]
    alpha = 1.0 - t_end
    dep = (wts @ depth[order]) / np.maximum(alpha, K.DEPTH_EPS)
    return RenderOutput(color.reshape(h, w, 3), dep.reshape(h, w), alpha.reshape(h, w))


class _RenderFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, means, opacities, scales, quats, colors, cam, background, tile):
        g = GaussianSet(*(t.detach().cpu().numpy().astype(np.float64) for t in
                          (means, opacities, scales, quats, colors)))
        g = _as_set(g)
        prep = _Prepared(g, cam, tile)
        bg = np.asarray(background, dtype=np.float64)
        out = _composite(prep, bg, np.float64)
        ctx.prep = prep
        ctx.bg = bg
        ctx.dtype = means.dtype
        mk = lambda x: torch.from_numpy(x).to(means.dtype)
        return mk(out.color), mk(out.depth), mk(out.alpha)

    @staticmethod
    def backward(ctx, grad_color, grad_depth, grad_alpha):
        as_np = lambda t: None if t is None else t.detach().cpu().numpy().astype(np.float64)
        grads = _backward(ctx.prep, ctx.bg, as_np(grad_color), as_np(grad_depth), as_np(grad_alpha))
        mk = lambda x: torch.from_numpy(x).to(ctx.dtype)
        return (mk(grads["means"]), mk(grads["opacities"]), mk(grads["scales"]), mk(grads["quats"]),
                mk(grads["colors"]), None, None, None)


def render_torch(means, opacities, scales, quats, colors, cam: CameraModel, background=(0.0, 0.0, 0.0),
                 tile: int = TILE):
    """Differentiable render for torch tensors; returns ``(color, depth, alpha)`` tensors."""
    return _RenderFunction.apply(means, opacities, scales, quats, colors, cam, background, tile)
