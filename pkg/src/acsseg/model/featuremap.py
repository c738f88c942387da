from __future__ import annotations

from dataclasses import dataclass

import torch

VALID_STRIDES = (1, 2, 4, 8, 16, 32)


@dataclass
class FeatureMap:
    """A (batch, channels, height, width) tensor tagged with its stride w.r.t. the network input."""

    data: torch.Tensor
    stride: int

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ValueError(f"FeatureMap needs a rank-4 tensor, got shape {tuple(self.data.shape)}")
        if self.stride not in VALID_STRIDES:
            raise ValueError(f"stride must be one of {VALID_STRIDES}, got {self.stride}")

    @property
    def shape(self):
        return tuple(self.data.shape)

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def spatial(self):
        return tuple(self.data.shape[-2:])
