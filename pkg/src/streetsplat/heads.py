"""DPT-style regression heads with multi-scale depth encoding, and Gaussian activation."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from streetsplat.encoder import ShapeError, TokenGrid, normalize_depth, trunc_normal_init
from streetsplat.render import GaussianSet
from streetsplat.scene_io import CameraModel

SCALES = (8, 4, 2, 1)
OFFSET_PIXELS = 1.0
QUAT_EPS = 1e-8


@dataclass
class GaussianRaster:
    depth_raw: torch.Tensor  # (H, W)
    offset_raw: torch.Tensor  # (H, W, 2)
    opacity_raw: torch.Tensor  # (H, W)
    color_raw: torch.Tensor  # (H, W, 3)
    scale_raw: torch.Tensor  # (H, W, 3)
    rot_raw: torch.Tensor  # (H, W, 4)

    @classmethod
    def from_heads(cls, geometry, appearance) -> "GaussianRaster":
        return cls(depth_raw=geometry["depth_raw"], offset_raw=geometry["offset_raw"],
                   opacity_raw=geometry["opacity_raw"], color_raw=appearance["color_raw"],
                   scale_raw=appearance["scale_raw"], rot_raw=appearance["rot_raw"])

    def fields(self) -> dict:
        return {k: getattr(self, k) for k in
                ("depth_raw", "offset_raw", "opacity_raw", "color_raw", "scale_raw", "rot_raw")}


class ResidualConvUnit(nn.Module):
    def __init__(self, features):
        super().__init__()
        self.conv1 = nn.Conv2d(features, features, 3, padding=1)
        self.conv2 = nn.Conv2d(features, features, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(F.relu(x))))


class DepthEncoder(nn.Module):
    """Two-convolution shallow net; the output layer starts at zero."""

    def __init__(self, features):
        super().__init__()
        self.conv1 = nn.Conv2d(1, features, 3, padding=1)
        self.conv2 = nn.Conv2d(features, features, 3, padding=1)

    def forward(self, d):
        return self.conv2(F.relu(self.conv1(d)))


class Reassemble(nn.Module):
    def __init__(self, dim, features, factor):
        super().__init__()
        self.factor = factor
        self.proj = nn.Conv2d(dim, features, 1)
        self.up = nn.ConvTranspose2d(features, features, factor, stride=factor) if factor > 1 else None

    def forward(self, x, size):
        x = self.proj(x)
        if self.up is not None:
            x = self.up(x)
        if tuple(x.shape[-2:]) != tuple(size):
            x = F.interpolate(x, size=size, mode="bilinear", align_corners=False)
        return x


class HeadWeights(nn.Module):
    def __init__(self, dim=64, features=32, out_channels=4, skip_channels=1, patch=8):
        super().__init__()
        self.patch = patch
        self.out_channels = out_channels
        self.skip_channels = skip_channels
        self.reassemble = nn.ModuleList(Reassemble(dim, features, max(patch // s, 1)) for s in SCALES)
        self.rcu_in = nn.ModuleList(ResidualConvUnit(features) for _ in SCALES)
        self.rcu_out = nn.ModuleList(ResidualConvUnit(features) for _ in SCALES)
        self.fuse_out = nn.ModuleList(nn.Conv2d(features, features, 1) for _ in SCALES)
        self.depth_enc = nn.ModuleList(DepthEncoder(features) for _ in SCALES)
        self.skip = nn.Conv2d(skip_channels, features, 3, padding=1)
        self.out1 = nn.Conv2d(features, features, 3, padding=1)
        self.out2 = nn.Conv2d(features, out_channels, 1)
        trunc_normal_init(self)
        for enc in self.depth_enc:
            nn.init.zeros_(enc.conv2.weight)
            nn.init.zeros_(enc.conv2.bias)


def pool_valid_mean(depth, factor: int):
    """Downsample a sparse raster by averaging the nonzero samples of each cell."""
    if factor == 1:
        return depth
    h, w = depth.shape
    cells = depth.reshape(h // factor, factor, w // factor, factor)
    total = cells.sum(dim=(1, 3))
    count = (cells != 0).sum(dim=(1, 3))
    return torch.where(count > 0, total / count.clamp(min=1), torch.zeros_like(total))


def dpt_decode(tokens: TokenGrid, sparse_depth, skip_raster, w: HeadWeights, *, far,
               use_depth=True, use_skip=True) -> torch.Tensor:
    """Decode tokens to a full-resolution ``(H, W, out_channels)`` raster.

    ``sparse_depth`` is metric (0 = missing); it is pooled to every fusion scale,
    normalized by ``far`` and passed through that scale's shallow net.
    """
    h, w_ = tokens.h_l * tokens.patch, tokens.w_l * tokens.patch
    if tokens.patch != w.patch:
        raise ShapeError(f"token patch {tokens.patch} != head patch {w.patch}")
    sparse_depth = torch.as_tensor(sparse_depth, dtype=tokens.tokens.dtype)
    skip_raster = torch.as_tensor(skip_raster, dtype=tokens.tokens.dtype)
    if tuple(sparse_depth.shape) != (h, w_):
        raise ShapeError(f"depth {tuple(sparse_depth.shape)} does not match decoded size {(h, w_)}")
    if skip_raster.ndim == 2:
        skip_raster = skip_raster[..., None]
    if tuple(skip_raster.shape) != (h, w_, w.skip_channels):
        raise ShapeError(f"skip raster {tuple(skip_raster.shape)} != {(h, w_, w.skip_channels)}")
    if h % SCALES[0] or w_ % SCALES[0]:
        raise ShapeError(f"decoded size {(h, w_)} must be divisible by {SCALES[0]}")

    tmap = tokens.as_map()
    path = None
    for i, s in enumerate(SCALES):
        size = (h // s, w_ // s)
        x = w.rcu_in[i](w.reassemble[i](tmap, size))
        if path is not None:
            x = x + F.interpolate(path, size=size, mode="bilinear", align_corners=True)
        x = w.fuse_out[i](w.rcu_out[i](x))
        if use_depth:
            d = normalize_depth(pool_valid_mean(sparse_depth, s), far)
            x = x + w.depth_enc[i](d[None, None])
        path = x
    if use_skip:
        path = path + w.skip(skip_raster.permute(2, 0, 1)[None])
    out = w.out2(F.relu(w.out1(path)))
    return out[0].permute(1, 2, 0)


def geometry_head(g_dep: TokenGrid, sparse_depth, w: HeadWeights, *, far, use_depth=True,
                  use_skip=True) -> dict:
    skip = normalize_depth(torch.as_tensor(sparse_depth, dtype=g_dep.tokens.dtype), far)
    out = dpt_decode(g_dep, sparse_depth, skip, w, far=far, use_depth=use_depth, use_skip=use_skip)
    return {"depth_raw": out[..., 0], "offset_raw": out[..., 1:3], "opacity_raw": out[..., 3]}


def gaussian_head(g_img: TokenGrid, image, sparse_depth, w: HeadWeights, *, far, use_depth=True) -> dict:
    out = dpt_decode(g_img, sparse_depth, image, w, far=far, use_depth=use_depth)
    return {"color_raw": out[..., 0:3], "scale_raw": out[..., 3:6], "rot_raw": out[..., 6:10]}


def activate_depth(depth_raw, near, far):
    """Inverse-depth interpolation: maps the reals monotonically onto (near, far)."""
    return 1.0 / (torch.sigmoid(depth_raw) * (1.0 / near - 1.0 / far) + 1.0 / far)


def activate_and_lift(raster: GaussianRaster, cam: CameraModel, use_offsets=True) -> GaussianSet:
    """Per-pixel raw outputs to world-space Gaussians, one per input pixel (row-major)."""
    dtype = raster.depth_raw.dtype
    h, w = raster.depth_raw.shape
    d = activate_depth(raster.depth_raw, cam.near, cam.far)
    vv, uu = torch.meshgrid(torch.arange(h, dtype=dtype), torch.arange(w, dtype=dtype), indexing="ij")
    if use_offsets:
        uu = uu + torch.tanh(raster.offset_raw[..., 0]) * OFFSET_PIXELS
        vv = vv + torch.tanh(raster.offset_raw[..., 1]) * OFFSET_PIXELS
    cam_pts = torch.stack([(uu - cam.cx) / cam.fx * d, (vv - cam.cy) / cam.fy * d, d], dim=-1)
    rot = torch.as_tensor(cam.rotation, dtype=dtype)
    trans = torch.as_tensor(cam.translation, dtype=dtype)
    means = (cam_pts.reshape(-1, 3) - trans) @ rot

    s_base = (2.0 * d / cam.fx)[..., None]
    scales = s_base * torch.exp(torch.clamp(raster.scale_raw, -5.0, 5.0))
    q = raster.rot_raw.reshape(-1, 4)
    norm = q.norm(dim=1, keepdim=True)
    small = norm < QUAT_EPS
    identity = torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=dtype).expand_as(q)
    quats = torch.where(small, identity, q / torch.where(small, torch.ones_like(norm), norm))
    return GaussianSet(
        means=means,
        opacities=torch.sigmoid(raster.opacity_raw).reshape(-1),
        scales=scales.reshape(-1, 3),
        quats=quats,
        colors=torch.sigmoid(raster.color_raw).reshape(-1, 3),
    )
