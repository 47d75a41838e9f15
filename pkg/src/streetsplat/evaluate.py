"""Evaluation protocols, metric tables and ablation runs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from streetsplat.metrics import psnr, ssim
from streetsplat.model import ConfigError, StreetSplatNet
from streetsplat.scene_io import Frame, Scene, sparsify_depth, write_depth, write_image

PROTOCOLS = ("next_frame", "skip_frame", "view_shift", "depth_drop")
CSV_HEADER = ("scene", "protocol", "psnr", "ssim", "lpips")
DROP_SEED = 12345


@dataclass(frozen=True)
class Protocol:
    name: str
    arg: float = 0.0

    @classmethod
    def parse(cls, text) -> "Protocol":
        """``next_frame``, ``skip_frame``, ``view_shift:<dx m>`` or ``depth_drop:<frac>``."""
        if isinstance(text, Protocol):
            return text
        name, _, arg = str(text).partition(":")
        if name not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {text!r}; choose from {PROTOCOLS}")
        if name in ("next_frame", "skip_frame"):
            if arg:
                raise ConfigError(f"protocol {name} takes no argument")
            return cls(name)
        try:
            value = float(arg) if arg else 0.0
        except ValueError:
            raise ConfigError(f"bad argument in protocol {text!r}") from None
        if name == "depth_drop" and not 0 <= value < 1:
            raise ConfigError(f"depth_drop fraction must lie in [0, 1), got {value}")
        return cls(name, value)

    def __str__(self):
        return self.name if self.name in ("next_frame", "skip_frame") else f"{self.name}:{self.arg:g}"


@dataclass
class MetricsRow:
    scene: str
    protocol: str
    psnr: float
    ssim: float
    lpips: Optional[float] = None
    reference: bool = True

    def csv_fields(self):
        fmt = lambda x: "" if x is None else ("nan" if math.isnan(x) else f"{x:.6f}")
        if not self.reference:
            return [self.scene, self.protocol, "no-reference", "no-reference", fmt(self.lpips)]
        return [self.scene, self.protocol, fmt(self.psnr), fmt(self.ssim), fmt(self.lpips)]


def drop_depth(sparse_depth, frac, seed=DROP_SEED):
    """Test-time depth drop: keep a uniform ``1 - frac`` share of the valid samples."""
    if frac == 0:
        return sparse_depth
    return sparsify_depth(sparse_depth, 1.0 - frac, "uniform", seed)


def _source_indices(scene: Scene, proto: Protocol, needs_next: bool):
    n = len(scene)
    if proto.name == "skip_frame":
        return range(n - 2)
    if proto.name == "view_shift" and not needs_next:
        return range(n)
    return range(n - 1)


def _render(model, frame: Frame, cam, next_image):
    with torch.no_grad():
        out = model(frame, cam, next_image=next_image)
    return (np.clip(out.color.double().numpy(), 0.0, 1.0), out.depth.double().numpy())


def evaluate(model: StreetSplatNet, scenes, protocol, *, export_dir=None, lpips_fn=None) -> list:
    """One row per scene (mean over its source frames) plus a final ``mean`` row."""
    proto = Protocol.parse(protocol)
    needs_next = not model.flags["matching"]
    rows = []
    for scene in scenes:
        world = scene.world() if proto.name == "view_shift" else None
        ps, ss, ls = [], [], []
        reference = True
        for t in _source_indices(scene, proto, needs_next):
            src = scene.frames[t]
            next_image = scene.frames[t + 1].image if t + 1 < len(scene) else None
            if proto.name == "depth_drop":
                src = Frame(src.image, drop_depth(src.sparse_depth, proto.arg, DROP_SEED + t), src.camera)
            if proto.name == "view_shift":
                cam = src.camera.shifted(proto.arg)
                gt = None
                if world is not None:
                    gt, _ = world.render(cam, scene.synthetic.supersample)
            else:
                target = scene.frames[t + (2 if proto.name == "skip_frame" else 1)]
                cam, gt = target.camera, target.image
            color, depth = _render(model, src, cam, next_image)
            if export_dir is not None:
                out = Path(export_dir) / scene.id
                out.mkdir(parents=True, exist_ok=True)
                write_image(out / f"{t:04d}.{proto.name}.png", color)
                write_depth(out / f"{t:04d}.{proto.name}.adgd", depth)
            if gt is None:
                reference = False
                continue
            ps.append(psnr(color, gt))
            ss.append(ssim(color, gt))
            if lpips_fn is not None:
                ls.append(float(lpips_fn(color, gt)))
        mean = lambda v: float(np.mean(v)) if v else math.nan
        rows.append(MetricsRow(scene.id, str(proto), mean(ps), mean(ss), mean(ls) if lpips_fn else None,
                               reference))
    return rows + [aggregate(rows, str(proto))]


def aggregate(rows, protocol) -> MetricsRow:
    ref = [r for r in rows if r.reference]
    if not ref:
        return MetricsRow("mean", protocol, math.nan, math.nan, None, reference=False)
    lp = [r.lpips for r in ref if r.lpips is not None]
    return MetricsRow("mean", protocol, float(np.mean([r.psnr for r in ref])),
                      float(np.mean([r.ssim for r in ref])), float(np.mean(lp)) if lp else None)


def write_metrics_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in rows:
            writer.writerow(r.csv_fields())


def read_metrics_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def ablate(variant, scenes, cfg, *, eval_scenes=None, protocol="next_frame", model_cfg=None,
           loss_cfg=None, log_path=None):
    """Train ``variant`` under ``cfg`` (only the ablation field is replaced) and evaluate it.

    Returns ``(rows, train_result)``; evaluation uses ``eval_scenes`` or the training scenes.
    """
    from dataclasses import replace

    from streetsplat.train import train

    cfg = replace(cfg, ablation=variant)
    result = train(scenes, cfg, model_cfg=model_cfg, loss_cfg=loss_cfg, log_path=log_path)
    rows = evaluate(result.model, eval_scenes if eval_scenes is not None else scenes, protocol)
    return rows, result
