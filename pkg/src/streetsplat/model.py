"""End-to-end network: image + sparse depth -> pixel-aligned Gaussians -> render."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from streetsplat.encoder import SiameseEncoder, build_dpe, encode, patchify, replicate_depth_channels
from streetsplat.heads import GaussianRaster, HeadWeights, activate_and_lift, gaussian_head, geometry_head
from streetsplat.matcher import MatcherWeights, decode_pair
from streetsplat.render import GaussianSet, render_torch
from streetsplat.scene_io import CameraModel, Frame

ABLATIONS = {
    "full": dict(dpe_depth=True, multiscale=True, matching=True),
    "no_dpe": dict(dpe_depth=False, multiscale=True, matching=True),
    "no_multiscale": dict(dpe_depth=True, multiscale=False, matching=True),
    "no_dpe_multiscale": dict(dpe_depth=False, multiscale=False, matching=True),
    # the depth branch sees the next frame's image; no sparse depth enters anywhere
    "no_matching": dict(dpe_depth=False, multiscale=False, matching=False),
}


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    patch: int = 8
    embed_dim: int = 64
    enc_depth: int = 4
    enc_heads: int = 4
    dec_depth: int = 2
    dec_heads: int = 4
    head_features: int = 32
    use_offsets: bool = True

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class RenderView:
    color: torch.Tensor
    depth: torch.Tensor
    alpha: torch.Tensor


class StreetSplatNet(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig(), ablation: str = "full"):
        super().__init__()
        if ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation variant {ablation!r}; choose from {sorted(ABLATIONS)}")
        self.cfg = cfg
        self.ablation = ablation
        self.flags = ABLATIONS[ablation]
        self.encoder = SiameseEncoder(cfg.patch, cfg.embed_dim, cfg.enc_depth, cfg.enc_heads)
        self.matcher = MatcherWeights(cfg.embed_dim, cfg.dec_depth, cfg.dec_heads)
        self.geometry = HeadWeights(cfg.embed_dim, cfg.head_features, 4, 1, cfg.patch)
        self.appearance = HeadWeights(cfg.embed_dim, cfg.head_features, 10, 3, cfg.patch)

    @property
    def dtype(self):
        return self.encoder.patch_embed.weight.dtype

    def raw_outputs(self, frame: Frame, next_image: Optional[np.ndarray] = None) -> GaussianRaster:
        far = frame.camera.far
        dt = self.dtype
        image = torch.as_tensor(frame.image, dtype=dt)
        depth = torch.as_tensor(frame.sparse_depth, dtype=dt)
        if self.flags["matching"]:
            depth_branch = replicate_depth_channels(depth, far)
        else:
            if next_image is None:
                raise ConfigError("the no_matching variant needs the next frame's image")
            depth_branch = torch.as_tensor(next_image, dtype=dt)

        tok_i = patchify(image, self.encoder)
        tok_s = patchify(depth_branch, self.encoder)
        dpe = build_dpe(tok_i.h_l, tok_i.w_l, frame.sparse_depth, patch=self.cfg.patch,
                        channels=self.cfg.embed_dim, far=far, use_depth=self.flags["dpe_depth"], dtype=dt)
        f_i = encode(tok_i, dpe, self.encoder)
        f_s = encode(tok_s, dpe, self.encoder)
        g_i, g_s = decode_pair(f_i, f_s, self.matcher)

        ms = self.flags["multiscale"]
        geo = geometry_head(g_s, depth, self.geometry, far=far, use_depth=ms, use_skip=ms)
        app = gaussian_head(g_i, image, depth, self.appearance, far=far, use_depth=ms)
        return GaussianRaster.from_heads(geo, app)

    def predict(self, frame: Frame, next_image=None) -> GaussianSet:
        raster = self.raw_outputs(frame, next_image)
        return activate_and_lift(raster, frame.camera, use_offsets=self.cfg.use_offsets)

    def forward(self, frame: Frame, target_cam: CameraModel, next_image=None, background=(0.0, 0.0, 0.0)):
        return render_gaussians(self.predict(frame, next_image), target_cam, background)


def render_gaussians(gs: GaussianSet, cam: CameraModel, background=(0.0, 0.0, 0.0)) -> RenderView:
    color, depth, alpha = render_torch(gs.means, gs.opacities, gs.scales, gs.quats, gs.colors, cam,
                                       background)
    return RenderView(color, depth, alpha)
