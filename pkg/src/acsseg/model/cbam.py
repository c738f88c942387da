"""Convolutional block attention: a channel gate followed by a spatial gate."""
from __future__ import annotations

import torch
import torch.nn as nn

from ..errors import ConfigError


class ChannelAttention(nn.Module):
    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        if reduction < 1 or channels % reduction:
            raise ConfigError(f"reduction {reduction} does not divide channel count {channels}")
        hidden = channels // reduction
        self.avg_pool = nn.AdaptiveAvgPool2d(1)
        self.max_pool = nn.AdaptiveMaxPool2d(1)
        self.mlp = nn.Sequential(
            nn.Conv2d(channels, hidden, 1),
            nn.ReLU(),
            nn.Conv2d(hidden, channels, 1),
        )

    def forward(self, x):
        return torch.sigmoid(self.mlp(self.avg_pool(x)) + self.mlp(self.max_pool(x)))


class ChannelMean(nn.Module):
    def forward(self, x):
        return torch.mean(x, dim=1, keepdim=True)


class ChannelMax(nn.Module):
    def forward(self, x):
        return torch.amax(x, dim=1, keepdim=True)


class SpatialAttention(nn.Module):
    def __init__(self, kernel_size: int = 7):
        super().__init__()
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ConfigError(f"spatial attention kernel must be odd, got {kernel_size}")
        self.mean = ChannelMean()
        self.max = ChannelMax()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2)

    def forward(self, x):
        return torch.sigmoid(self.conv(torch.cat([self.mean(x), self.max(x)], dim=1)))


class CBAM(nn.Module):
    def __init__(self, channels: int, reduction: int = 16, kernel_size: int = 7):
        super().__init__()
        self.channel = ChannelAttention(channels, reduction)
        self.spatial = SpatialAttention(kernel_size)

    def forward(self, x):
        x = x * self.channel(x)
        return x * self.spatial(x)


def cbam_param_count(channels: int, reduction: int, kernel_size: int) -> int:
    hidden = channels // reduction
    return (channels * hidden + hidden) + (hidden * channels + channels) + (2 * kernel_size ** 2 + 1)
