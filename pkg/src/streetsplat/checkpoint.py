"""ADGC checkpoint container.

Layout (little-endian)::

    b"ADGC" | u32 version | u32 meta_len | meta JSON (utf-8) | u32 n_tensors
    then per tensor: u32 name_len | name (utf-8) | u32 ndim | u32 dims[ndim] | f32 payload
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

MAGIC = b"ADGC"
VERSION = 1
_U32 = struct.Struct("<I")


class CheckpointFormatError(Exception):
    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = path


@dataclass
class Checkpoint:
    tensors: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def step(self) -> int:
        return int(self.meta.get("step", 0))


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(ckpt: Checkpoint, path):
    parts = [MAGIC, _U32.pack(VERSION)]
    meta = json.dumps(ckpt.meta, sort_keys=True).encode()
    parts += [_U32.pack(len(meta)), meta, _U32.pack(len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr, dtype="<f4")  # tobytes() is C-ordered; keeps 0-d shapes
        bname = name.encode()
        parts += [_U32.pack(len(bname)), bname, _U32.pack(arr.ndim)]
        parts += [_U32.pack(d) for d in arr.shape]
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointFormatError(path, "truncated file")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    def u32():
        return _U32.unpack(take(4))[0]

    if take(4) != MAGIC:
        raise CheckpointFormatError(path, "bad magic")
    version = u32()
    if version != VERSION:
        raise CheckpointFormatError(path, f"unsupported version {version}")
    try:
        meta = json.loads(take(u32()).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(path, f"corrupt metadata ({exc})") from exc
    tensors = {}
    for _ in range(u32()):
        name = take(u32()).decode()
        dims = tuple(u32() for _ in range(u32()))
        count = int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(take(4 * count), dtype="<f4").reshape(dims).copy()
    if pos != len(data):
        raise CheckpointFormatError(path, f"{len(data) - pos} trailing bytes")
    return Checkpoint(tensors=tensors, meta=meta)


def model_tensors(model: torch.nn.Module) -> dict:
    return {f"model/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}


def optimizer_tensors(model: torch.nn.Module, optimizer: torch.optim.Optimizer) -> dict:
    names = {id(p): n for n, p in model.named_parameters()}
    out = {}
    for group in optimizer.param_groups:
        for p in group["params"]:
            state = optimizer.state.get(p)
            if not state:
                continue
            n = names[id(p)]
            for key in ("exp_avg", "exp_avg_sq"):
                out[f"optim/{n}/{key}"] = state[key].detach().cpu().numpy()
            out[f"optim/{n}/step"] = np.array([float(state["step"])])
    return out


def load_model_state(model: torch.nn.Module, ckpt: Checkpoint):
    dtype = next(model.parameters()).dtype
    state = {k[len("model/"):]: torch.from_numpy(v).to(dtype)
             for k, v in ckpt.tensors.items() if k.startswith("model/")}
    model.load_state_dict(state)


def load_optimizer_state(model: torch.nn.Module, optimizer: torch.optim.Optimizer, ckpt: Checkpoint):
    for n, p in model.named_parameters():
        key = f"optim/{n}/exp_avg"
        if key not in ckpt.tensors:
            continue
        optimizer.state[p] = {
            "step": torch.tensor(float(ckpt.tensors[f"optim/{n}/step"][0])),
            "exp_avg": torch.from_numpy(ckpt.tensors[key]).to(p.dtype),
            "exp_avg_sq": torch.from_numpy(ckpt.tensors[f"optim/{n}/exp_avg_sq"]).to(p.dtype),
        }
