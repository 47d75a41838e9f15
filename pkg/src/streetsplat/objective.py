"""Training objective: MSE plus optional perceptual term, and edge-aware depth smoothness."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable, Optional

import torch

PerceptualFn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


@dataclass
class LossConfig:
    lambda_lpips: float = 0.05
    perceptual: str = "off"  # off | provided
    depth_weight: float = 1.0

    def __post_init__(self):
        if self.lambda_lpips < 0:
            raise ValueError(f"lambda_lpips must be >= 0, got {self.lambda_lpips}")
        if self.perceptual not in ("off", "provided"):
            raise ValueError(f"perceptual must be 'off' or 'provided', got {self.perceptual!r}")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown loss keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LossReport:
    total: torch.Tensor
    mse: torch.Tensor
    perceptual: torch.Tensor
    depth_smoothness: torch.Tensor

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k).detach()) for k in ("total", "mse", "perceptual", "depth_smoothness")}


def _check_same(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def nvs_loss(pred, gt, cfg: LossConfig, perceptual_fn: Optional[PerceptualFn] = None):
    """Returns ``(loss, mse, perceptual_distance)``; the perceptual term is 0 when off."""
    pred, gt = torch.as_tensor(pred), torch.as_tensor(gt, dtype=torch.as_tensor(pred).dtype)
    _check_same(pred, gt, "nvs_loss")
    mse = torch.mean((pred - gt) ** 2)
    if cfg.perceptual == "provided":
        if perceptual_fn is None:
            raise ValueError("perceptual='provided' needs a perceptual_fn")
        dist = torch.as_tensor(perceptual_fn(pred, gt), dtype=pred.dtype)
    else:
        dist = torch.zeros((), dtype=pred.dtype)
    return mse + cfg.lambda_lpips * dist, mse, dist


def depth_smoothness_loss(depth, image):
    """Edge-aware smoothness: mean over sites of |dD/dx| e^-|dI/dx| + |dD/dy| e^-|dI/dy|.

    Forward differences; |dI| is the channel mean of absolute color differences.
    Sites are the pixels where both differences exist, i.e. all but the last row
    and column. For a 1-pixel-tall or -wide raster the missing axis is dropped.
    """
    depth = torch.as_tensor(depth)
    image = torch.as_tensor(image, dtype=depth.dtype)
    if image.shape[:2] != depth.shape:
        raise ValueError(f"depth {tuple(depth.shape)} vs image {tuple(image.shape)}")
    h, w = depth.shape
    rows = slice(0, h - 1) if h > 1 else slice(0, 1)
    cols = slice(0, w - 1) if w > 1 else slice(0, 1)
    terms = []
    if w > 1:
        dd = torch.abs(depth[rows, 1:] - depth[rows, :-1])
        di = torch.abs(image[rows, 1:] - image[rows, :-1]).mean(dim=-1)
        terms.append(dd * torch.exp(-di))
    if h > 1:
        dd = torch.abs(depth[1:, cols] - depth[:-1, cols])
        di = torch.abs(image[1:, cols] - image[:-1, cols]).mean(dim=-1)
        terms.append(dd * torch.exp(-di))
    if not terms:
        return depth.new_zeros(())
    return sum(terms).mean()


def total_loss(render, gt_frame, cfg: LossConfig, perceptual_fn=None) -> LossReport:
    """Full objective for a render (``.color``, ``.depth``) against the target frame.

    The smoothness term sees depth divided by the camera's far bound, keeping it on
    the same [0, 1] scale as the colors.
    """
    color = torch.as_tensor(render.color)
    depth = torch.as_tensor(render.depth, dtype=color.dtype)
    gt = torch.as_tensor(gt_frame.image, dtype=color.dtype)
    nvs, mse, dist = nvs_loss(color, gt, cfg, perceptual_fn)
    smooth = depth_smoothness_loss(depth / gt_frame.camera.far, gt)
    return LossReport(total=nvs + cfg.depth_weight * smooth, mse=mse, perceptual=dist,
                      depth_smoothness=smooth)
