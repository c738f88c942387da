"""Mix-transformer (SegFormer-style) hierarchical encoder."""
from __future__ import annotations

from typing import List

import torch
import torch.nn as nn

from .featuremap import FeatureMap


class DropPath(nn.Module):
    def __init__(self, p: float = 0.0):
        super().__init__()
        self.p = p

    def forward(self, x):
        if self.p == 0.0 or not self.training:
            return x
        keep = 1.0 - self.p
        mask = x.new_empty((x.shape[0],) + (1,) * (x.ndim - 1)).bernoulli_(keep)
        return x * mask / keep


class OverlapPatchEmbed(nn.Module):
    def __init__(self, cin: int, dim: int, kernel_size: int, stride: int):
        super().__init__()
        self.proj = nn.Conv2d(cin, dim, kernel_size, stride=stride, padding=kernel_size // 2)
        self.norm = nn.LayerNorm(dim)

    def forward(self, x):
        x = self.proj(x)
        _, _, h, w = x.shape
        return self.norm(x.flatten(2).transpose(1, 2)), h, w


class EfficientSelfAttention(nn.Module):
    """Multi-head attention with keys/values spatially reduced by an sr x sr strided conv."""

    def __init__(self, dim: int, heads: int, sr_ratio: int = 1, attn_drop: float = 0.0):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, 2 * dim)
        self.proj = nn.Linear(dim, dim)
        self.attn_drop = nn.Dropout(attn_drop)
        self.sr_ratio = sr_ratio
        if sr_ratio > 1:
            self.sr = nn.Conv2d(dim, dim, sr_ratio, stride=sr_ratio)
            self.norm = nn.LayerNorm(dim)
        self.last_attn = None
        self.keep_attn = False

    def reduce(self, x, h, w):
        if self.sr_ratio == 1:
            return x
        b, n, c = x.shape
        x = x.transpose(1, 2).reshape(b, c, h, w)
        x = self.sr(x).flatten(2).transpose(1, 2)
        return self.norm(x)

    def forward(self, x, h, w):
        b, n, c = x.shape
        q = self.q(x).reshape(b, n, self.heads, c // self.heads).transpose(1, 2)
        kv = self.kv(self.reduce(x, h, w))
        m = kv.shape[1]
        k, v = kv.reshape(b, m, 2, self.heads, c // self.heads).permute(2, 0, 3, 1, 4)
        attn = torch.softmax((q @ k.transpose(-2, -1)) * self.scale, dim=-1)
        if self.keep_attn:
            self.last_attn = attn.detach()
        out = (self.attn_drop(attn) @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(out)


class MixFFN(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.dwconv = nn.Conv2d(hidden, hidden, 3, padding=1, groups=hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x, h, w):
        x = self.fc1(x)
        b, n, c = x.shape
        x = self.dwconv(x.transpose(1, 2).reshape(b, c, h, w)).flatten(2).transpose(1, 2)
        return self.fc2(self.act(x))


class TransformerBlock(nn.Module):
    def __init__(self, dim, heads, sr_ratio, expansion, drop_path=0.0, attn_drop=0.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = EfficientSelfAttention(dim, heads, sr_ratio, attn_drop)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = MixFFN(dim, dim * expansion)
        self.drop_path = DropPath(drop_path)

    def forward(self, x, h, w):
        x = x + self.drop_path(self.attn(self.norm1(x), h, w))
        return x + self.drop_path(self.ffn(self.norm2(x), h, w))


class MixTransformerStage(nn.Module):
    def __init__(self, cin, dim, depth, heads, sr_ratio, expansion, first, drop_paths, attn_drop):
        super().__init__()
        if first:
            self.patch_embed = OverlapPatchEmbed(cin, dim, 7, 4)
        else:
            self.patch_embed = OverlapPatchEmbed(cin, dim, 3, 2)
        self.blocks = nn.ModuleList(
            TransformerBlock(dim, heads, sr_ratio, expansion, dp, attn_drop) for dp in drop_paths
        )
        self.norm = nn.LayerNorm(dim)

    def forward(self, x):
        tokens, h, w = self.patch_embed(x)
        for blk in self.blocks:
            tokens = blk(tokens, h, w)
        tokens = self.norm(tokens)
        b, n, c = tokens.shape
        return tokens.transpose(1, 2).reshape(b, c, h, w)


class MixTransformerEncoder(nn.Module):
    def __init__(self, in_channels, widths, depths, heads, sr_ratios, expansion=4,
                 drop_path=0.0, attn_drop=0.0):
        super().__init__()
        total = sum(depths)
        rates = [drop_path * i / max(total - 1, 1) for i in range(total)]
        self.stages = nn.ModuleList()
        cin, k = in_channels, 0
        for i in range(4):
            self.stages.append(MixTransformerStage(
                cin, widths[i], depths[i], heads[i], sr_ratios[i], expansion,
                first=(i == 0), drop_paths=rates[k:k + depths[i]], attn_drop=attn_drop))
            cin, k = widths[i], k + depths[i]

    def forward(self, x) -> List[FeatureMap]:
        feats, stride = [], 4
        for stage in self.stages:
            x = stage(x)
            feats.append(FeatureMap(x, stride))
            stride *= 2
        return feats

    def attention_modules(self):
        return [m for m in self.modules() if isinstance(m, EfficientSelfAttention)]
