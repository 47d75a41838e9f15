"""Training loop: Adam with cosine-decayed learning rate over (t -> t+1) frame pairs."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from streetsplat.checkpoint import (
    Checkpoint,
    config_hash,
    load_model_state,
    load_optimizer_state,
    model_tensors,
    optimizer_tensors,
)
from streetsplat.model import ABLATIONS, ConfigError, ModelConfig, StreetSplatNet
from streetsplat.objective import LossConfig, total_loss
from streetsplat.precision import torch_dtype
from streetsplat.scene_io import Frame, sparsify_depth


class NonFiniteLossError(RuntimeError):
    def __init__(self, step, report: dict, dump_path=None):
        msg = f"non-finite loss at step {step}: {report}"
        if dump_path is not None:
            msg += f" (batch dumped to {dump_path})"
        super().__init__(msg)
        self.step = step
        self.report = report
        self.dump_path = dump_path


@dataclass
class TrainConfig:
    lr_init: float = 1e-4
    lr_min: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 1
    total_steps: int = 2000
    seed: int = 0
    lpips: bool = False
    ablation: str = "full"
    grad_clip: float = 1.0
    # each step removes a U(0, depth_dropout) share of the source LiDAR samples
    depth_dropout: float = 0.0

    def __post_init__(self):
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be >= 1, got {self.total_steps}")
        if not self.lr_init > 0:
            raise ConfigError(f"lr_init must be > 0, got {self.lr_init}")
        if not 0 <= self.lr_min <= self.lr_init:
            raise ConfigError(f"lr_min must lie in [0, lr_init], got {self.lr_min}")
        if not 0 <= self.depth_dropout < 1:
            raise ConfigError(f"depth_dropout must lie in [0, 1), got {self.depth_dropout}")
        if self.batch_size != 1:
            raise ConfigError("only batch_size 1 is supported")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation variant {self.ablation!r}; choose from {sorted(ABLATIONS)}")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)


def cosine_lr(step, cfg: TrainConfig) -> float:
    """lr_min + (lr_init - lr_min) * (1 + cos(pi * step / total_steps)) / 2."""
    frac = min(max(step, 0), cfg.total_steps) / cfg.total_steps
    return cfg.lr_min + (cfg.lr_init - cfg.lr_min) * 0.5 * (1.0 + math.cos(math.pi * frac))


@dataclass
class TrainResult:
    model: StreetSplatNet
    optimizer: torch.optim.Optimizer
    checkpoint: Checkpoint
    log: list


def _pair_sampler(scenes, seed, depth_dropout=0.0):
    """Yields ``(scene, t, drop_fraction, drop_seed)``; the same seed replays the same stream."""
    rng = np.random.default_rng(seed)
    while True:
        s = int(rng.integers(len(scenes)))
        t = int(rng.integers(len(scenes[s]) - 1))
        if depth_dropout > 0:
            yield s, t, float(rng.uniform(0.0, depth_dropout)), int(rng.integers(2**31))
        else:
            yield s, t, 0.0, 0


def _thin_depth(frame: Frame, frac, seed) -> Frame:
    if frac <= 0:
        return frame
    return Frame(frame.image, sparsify_depth(frame.sparse_depth, 1.0 - frac, "uniform", seed), frame.camera)


def _dump_batch(dump_dir, step, src, tgt, scene_id):
    path = Path(dump_dir) / f"nonfinite_step{step:06d}.npz"
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, source_image=src.image, source_depth=src.sparse_depth, target_image=tgt.image,
             source_camera=json.dumps(src.camera.to_dict()), target_camera=json.dumps(tgt.camera.to_dict()),
             scene=scene_id, step=step)
    return path


def run_meta(train_cfg: TrainConfig, model_cfg: ModelConfig, loss_cfg: LossConfig) -> dict:
    config = {"train": asdict(train_cfg), "model": asdict(model_cfg), "loss": asdict(loss_cfg)}
    return {"config": config, "config_hash": config_hash(config), "ablation": train_cfg.ablation}


def make_checkpoint(model, optimizer, step, train_cfg, model_cfg, loss_cfg) -> Checkpoint:
    tensors = model_tensors(model)
    tensors.update(optimizer_tensors(model, optimizer))
    meta = run_meta(train_cfg, model_cfg, loss_cfg)
    meta["step"] = int(step)
    return Checkpoint(tensors=tensors, meta=meta)


def model_from_checkpoint(ckpt: Checkpoint, dtype=None) -> StreetSplatNet:
    cfg = ckpt.meta["config"]
    model = StreetSplatNet(ModelConfig.from_dict(cfg["model"]), cfg["train"]["ablation"])
    model = model.to(dtype or torch_dtype())
    load_model_state(model, ckpt)
    model.eval()
    return model


def train(scenes, cfg: TrainConfig, *, model_cfg: Optional[ModelConfig] = None,
          loss_cfg: Optional[LossConfig] = None, perceptual_fn=None, log_path=None,
          dump_dir=None, resume: Optional[Checkpoint] = None, progress=None) -> TrainResult:
    """Train on random (t, t+1) pairs drawn from ``scenes``.

    The log holds one dict per step; with ``log_path`` it is also written as JSON lines.
    ``resume`` continues from a checkpoint made under the same configuration.
    """
    model_cfg = model_cfg or ModelConfig()
    loss_cfg = loss_cfg or LossConfig()
    if cfg.lpips and loss_cfg.perceptual == "off":
        loss_cfg = LossConfig(lambda_lpips=loss_cfg.lambda_lpips, perceptual="provided",
                              depth_weight=loss_cfg.depth_weight)
    if loss_cfg.perceptual == "provided" and perceptual_fn is None:
        raise ConfigError("the perceptual term is enabled but no perceptual_fn was supplied")
    if not scenes or any(len(s) < 2 for s in scenes):
        raise ValueError("training needs at least one scene with two or more frames")

    torch.manual_seed(cfg.seed)
    model = StreetSplatNet(model_cfg, cfg.ablation).to(torch_dtype())
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr_init, betas=(cfg.beta1, cfg.beta2),
                                 eps=cfg.eps)
    sampler = _pair_sampler(scenes, cfg.seed, cfg.depth_dropout)
    start = 0
    if resume is not None:
        expected = run_meta(cfg, model_cfg, loss_cfg)["config_hash"]
        if resume.meta.get("config_hash") != expected:
            raise ConfigError("checkpoint was written under a different configuration")
        load_model_state(model, resume)
        load_optimizer_state(model, optimizer, resume)
        start = resume.step
        for _ in range(start):
            next(sampler)

    log = []
    log_file = None
    if log_path is not None:
        log_file = open(log_path, "a" if resume is not None else "w")
    t0 = time.perf_counter()
    model.train()
    try:
        for step in range(start, cfg.total_steps):
            lr = cosine_lr(step, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            s, t, frac, drop_seed = next(sampler)
            src, tgt = _thin_depth(scenes[s].frames[t], frac, drop_seed), scenes[s].frames[t + 1]
            out = model(src, tgt.camera, next_image=tgt.image)
            report = total_loss(out, tgt, loss_cfg, perceptual_fn)
            values = report.as_floats()
            if not all(math.isfinite(v) for v in values.values()):
                dump = _dump_batch(dump_dir, step, src, tgt, scenes[s].id) if dump_dir else None
                raise NonFiniteLossError(step, values, dump)
            optimizer.zero_grad()
            report.total.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            entry = {"step": step, "lr": lr, **values, "wall_time": time.perf_counter() - t0}
            log.append(entry)
            if log_file is not None:
                log_file.write(json.dumps(entry) + "\n")
            if progress is not None:
                progress(entry)
    finally:
        if log_file is not None:
            log_file.close()
    model.eval()
    ckpt = make_checkpoint(model, optimizer, cfg.total_steps, cfg, model_cfg, loss_cfg)
    return TrainResult(model=model, optimizer=optimizer, checkpoint=ckpt, log=log)
