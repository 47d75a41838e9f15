"""Two-stream cross-attention decoders fusing image and depth tokens."""

from __future__ import annotations

import torch.nn as nn

from streetsplat.encoder import Attention, Mlp, ShapeError, TokenGrid, trunc_normal_init


class CrossBlock(nn.Module):
    """Self-attention on the own stream, cross-attention into the other stream, MLP."""

    def __init__(self, dim, heads):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.norm_ctx = nn.LayerNorm(dim)
        self.cross_attn = Attention(dim, heads)
        self.norm3 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim)

    def forward(self, x, other):
        x = x + self.self_attn(self.norm1(x))
        x = x + self.cross_attn(self.norm2(x), self.norm_ctx(other))
        return x + self.mlp(self.norm3(x))


class CrossDecoder(nn.Module):
    def __init__(self, dim, depth, heads):
        super().__init__()
        self.blocks = nn.ModuleList(CrossBlock(dim, heads) for _ in range(depth))
        self.norm = nn.LayerNorm(dim)


class MatcherWeights(nn.Module):
    """Independent decoders: ``image`` produces G_I, ``depth`` produces G_S."""

    def __init__(self, dim=64, depth=2, heads=4):
        super().__init__()
        self.image = CrossDecoder(dim, depth, heads)
        self.depth = CrossDecoder(dim, depth, heads)
        trunc_normal_init(self)


def decode_pair(f_img: TokenGrid, f_dep: TokenGrid, w: MatcherWeights):
    """Interleaved decoding: block ``b`` of each stream reads the other stream's block-``b`` input."""
    if f_img.tokens.shape != f_dep.tokens.shape or (f_img.h_l, f_img.w_l) != (f_dep.h_l, f_dep.w_l):
        raise ShapeError(f"stream shapes differ: {tuple(f_img.tokens.shape)} vs {tuple(f_dep.tokens.shape)}")
    x, y = f_img.tokens, f_dep.tokens
    for blk_i, blk_s in zip(w.image.blocks, w.depth.blocks):
        x, y = blk_i(x, y), blk_s(y, x)
    return f_img.with_tokens(w.image.norm(x)), f_dep.with_tokens(w.depth.norm(y))
