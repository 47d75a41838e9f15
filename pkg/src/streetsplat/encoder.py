"""Patch tokenizer, depth-guided positional embedding and the shared ViT encoder."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


class ShapeError(ValueError):
    pass


@dataclass
class TokenGrid:
    tokens: torch.Tensor  # (L, C)
    h_l: int
    w_l: int
    patch: int

    def __post_init__(self):
        if self.tokens.ndim != 2 or self.tokens.shape[0] != self.h_l * self.w_l:
            raise ShapeError(f"tokens {tuple(self.tokens.shape)} inconsistent with grid {self.h_l}x{self.w_l}")

    @property
    def channels(self) -> int:
        return self.tokens.shape[1]

    def with_tokens(self, tokens) -> "TokenGrid":
        return TokenGrid(tokens, self.h_l, self.w_l, self.patch)

    def as_map(self) -> torch.Tensor:
        """(1, C, h_l, w_l) view for convolutional consumers."""
        return self.tokens.T.reshape(1, -1, self.h_l, self.w_l)


@dataclass
class DPEmbedding:
    values: torch.Tensor  # (L, C)
    k: np.ndarray  # (L,) row-major linear index
    z: np.ndarray  # (L,) mean valid depth per patch, 0 where none
    x_slice: slice
    y_slice: slice
    z_slice: slice


def trunc_normal_init(module: nn.Module, std=0.02):
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.trunc_normal_(m.weight, std=std, a=-2 * std, b=2 * std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def normalize_depth(depth, far):
    """Metric depth to [0, 1] by d / far; missing (0) stays 0."""
    return torch.clamp(torch.as_tensor(depth) / far, 0.0, 1.0)


def replicate_depth_channels(sparse_depth, far) -> torch.Tensor:
    d = normalize_depth(sparse_depth, far)
    return d[..., None].expand(*d.shape, 3).clone()


# Grid coordinates step by about 1/w_l, so their code needs fine wavelengths.
# Patch depths wobble by a meter or more when LiDAR returns come and go; a
# coarser depth ladder keeps that wobble from scrambling the code.
GRID_OCTAVES = 5.0
DEPTH_OCTAVES = 2.0


def sinusoidal_encoding(x, channels: int, octaves: float = GRID_OCTAVES) -> torch.Tensor:
    """Fixed frequency code of values in [0, 1]: sines, cosines and, for odd widths, x itself.

    Frequencies run geometrically from pi to pi * 2**octaves.
    """
    x = torch.as_tensor(x)
    m = channels // 2
    if m:
        freqs = math.pi * 2.0 ** (torch.arange(m, dtype=x.dtype) * octaves / max(m - 1, 1))
        ang = x[:, None] * freqs[None, :]
        parts = [torch.sin(ang), torch.cos(ang)]
    else:
        parts = []
    if channels % 2:
        parts.append(x[:, None])
    return torch.cat(parts, dim=1)


def dpe_channel_split(channels: int):
    nx = math.ceil(channels / 3)
    rest = channels - nx
    ny = math.ceil(rest / 2)
    return slice(0, nx), slice(nx, nx + ny), slice(nx + ny, channels)


def patch_depths(sparse_depth, patch: int) -> np.ndarray:
    """Mean of the valid (nonzero) depths inside each patch, 0 where a patch has none."""
    d = np.asarray(sparse_depth, dtype=np.float64)
    h, w = d.shape
    cells = d.reshape(h // patch, patch, w // patch, patch)
    total = cells.sum(axis=(1, 3))
    count = (cells != 0).sum(axis=(1, 3))
    return np.where(count > 0, total / np.maximum(count, 1), 0.0)


def build_dpe(h_l, w_l, sparse_depth, *, patch, channels, far, use_depth=True,
              dtype=torch.float32) -> DPEmbedding:
    depth = np.asarray(sparse_depth)
    if depth.shape != (h_l * patch, w_l * patch):
        raise ShapeError(f"depth {depth.shape} does not match grid {h_l}x{w_l} with patch {patch}")
    ii, jj = np.meshgrid(np.arange(h_l), np.arange(w_l), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    k = ii * w_l + jj
    z = patch_depths(depth, patch).ravel()
    xs, ys, zs = dpe_channel_split(channels)
    x_hat = torch.tensor(jj / max(w_l - 1, 1), dtype=dtype)
    y_hat = torch.tensor(ii / max(h_l - 1, 1), dtype=dtype)
    z_hat = torch.tensor(np.clip(z / far, 0.0, 1.0) if use_depth else np.zeros_like(z), dtype=dtype)
    values = torch.cat([
        sinusoidal_encoding(x_hat, xs.stop - xs.start),
        sinusoidal_encoding(y_hat, ys.stop - ys.start),
        sinusoidal_encoding(z_hat, zs.stop - zs.start, DEPTH_OCTAVES),
    ], dim=1)
    return DPEmbedding(values=values, k=k, z=z, x_slice=xs, y_slice=ys, z_slice=zs)


def grid_position(k, w_l):
    """Inverse of the row-major index: ``k -> (k // w_l, k % w_l)``."""
    return np.divmod(np.asarray(k), w_l)


class Attention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        if dim % heads:
            raise ShapeError(f"embed dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, 2 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, context=None):
        context = x if context is None else context
        L, C = x.shape
        hd = C // self.heads
        q = self.q(x).reshape(L, self.heads, hd).transpose(0, 1)
        k, v = self.kv(context).reshape(context.shape[0], 2, self.heads, hd).permute(1, 2, 0, 3)
        attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(hd), dim=-1)
        out = (attn @ v).transpose(0, 1).reshape(L, C)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim, ratio=4):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim * ratio)
        self.fc2 = nn.Linear(dim * ratio, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class Block(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class SiameseEncoder(nn.Module):
    """One set of ViT weights applied to both the image and the replicated depth raster."""

    def __init__(self, patch=8, dim=64, depth=4, heads=4):
        super().__init__()
        self.patch = patch
        self.dim = dim
        self.patch_embed = nn.Linear(3 * patch * patch, dim)
        self.blocks = nn.ModuleList(Block(dim, heads) for _ in range(depth))
        trunc_normal_init(self)


def patchify(raster, weights: SiameseEncoder) -> TokenGrid:
    raster = torch.as_tensor(raster)
    p = weights.patch
    h, w, c = raster.shape
    if h % p or w % p:
        raise ShapeError(f"raster {h}x{w} not divisible by patch size {p}")
    cells = raster.reshape(h // p, p, w // p, p, c).permute(0, 2, 1, 3, 4).reshape(-1, p * p * c)
    return TokenGrid(weights.patch_embed(cells), h // p, w // p, p)


def encode(tokens: TokenGrid, dpe: DPEmbedding, weights: SiameseEncoder) -> TokenGrid:
    if tuple(dpe.values.shape) != tuple(tokens.tokens.shape):
        raise ShapeError(f"DPE {tuple(dpe.values.shape)} vs tokens {tuple(tokens.tokens.shape)}")
    x = tokens.tokens + dpe.values
    for blk in weights.blocks:
        x = blk(x)
    return tokens.with_tokens(x)
