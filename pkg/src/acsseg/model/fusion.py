from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import WiringError
from .cbam import CBAM
from .featuremap import FeatureMap


def upsample2x(x, mode="bilinear"):
    if mode == "bilinear":
        return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
    return F.interpolate(x, scale_factor=2, mode="nearest")


class FusionBlock(nn.Module):
    """Upsample a transformer feature x2, concatenate with the CNN feature, optionally gate with CBAM.

    With ``attention=False`` this is the plain-concatenation (CS-SegNet) fusion and
    holds no parameters.
    """

    def __init__(self, vit_channels: int, cnn_channels: int, attention: bool = True,
                 reduction: int = 16, kernel_size: int = 7, upsample_mode: str = "bilinear"):
        super().__init__()
        self.out_channels = vit_channels + cnn_channels
        self.upsample_mode = upsample_mode
        self.cbam = CBAM(self.out_channels, reduction, kernel_size) if attention else None

    def forward(self, s: FeatureMap, r: FeatureMap) -> FeatureMap:
        if s.stride != 2 * r.stride:
            raise WiringError(f"fusion expects transformer stride == 2 x CNN stride, "
                              f"got {s.stride} and {r.stride}")
        if s.data.shape[0] != r.data.shape[0]:
            raise WiringError("fusion inputs have different batch sizes")
        u = upsample2x(s.data, self.upsample_mode)
        if u.shape[-2:] != r.data.shape[-2:]:
            raise WiringError(f"upsampled size {tuple(u.shape[-2:])} != CNN feature size "
                              f"{tuple(r.data.shape[-2:])}")
        c = torch.cat([u, r.data], dim=1)
        if self.cbam is not None:
            c = self.cbam(c)
        return FeatureMap(c, r.stride)
