"""Five-stage UNet decoder: four skip-joined stages and a final skip-free stage."""
from __future__ import annotations

from typing import Optional, Sequence

import torch
import torch.nn as nn

from ..errors import WiringError
from .featuremap import FeatureMap
from .fusion import upsample2x


class ConvBNReLU(nn.Sequential):
    def __init__(self, cin, cout):
        super().__init__(
            nn.Conv2d(cin, cout, 3, padding=1, bias=False),
            nn.BatchNorm2d(cout),
            nn.ReLU(),
        )


class DecoderStage(nn.Module):
    def __init__(self, cin: int, skip_channels: int, cout: int, upsample_mode="bilinear"):
        super().__init__()
        self.upsample_mode = upsample_mode
        self.conv1 = ConvBNReLU(cin + skip_channels, cout)
        self.conv2 = ConvBNReLU(cout, cout)

    def forward(self, x: FeatureMap, skip: Optional[FeatureMap] = None) -> FeatureMap:
        h = upsample2x(x.data, self.upsample_mode)
        stride = x.stride // 2
        if skip is not None:
            if skip.stride != stride or skip.spatial != tuple(h.shape[-2:]):
                raise WiringError(f"decoder expected a skip at stride {stride} with size "
                                  f"{tuple(h.shape[-2:])}, got stride {skip.stride} size {skip.spatial}")
            h = torch.cat([h, skip.data], dim=1)
        return FeatureMap(self.conv2(self.conv1(h)), stride)


class UNetDecoder(nn.Module):
    SKIP_STRIDES = (16, 8, 4, 2)

    def __init__(self, bottleneck_channels: int, skip_channels: Sequence[int], widths: Sequence[int],
                 upsample_mode="bilinear"):
        """``skip_channels`` lists the skip widths deepest-first (F4, F3, F2, F1)."""
        super().__init__()
        self.stages = nn.ModuleList()
        cin = bottleneck_channels
        for i, cout in enumerate(widths):
            skip = skip_channels[i] if i < len(skip_channels) else 0
            self.stages.append(DecoderStage(cin, skip, cout, upsample_mode))
            cin = cout

    def forward(self, bottleneck: FeatureMap, skips: Sequence[FeatureMap], return_stages=False):
        if bottleneck.stride != 32:
            raise WiringError(f"bottleneck must be at stride 32, got {bottleneck.stride}")
        for expected, s in zip(self.SKIP_STRIDES, skips):
            if s.stride != expected:
                raise WiringError(f"skip connections must be at strides {self.SKIP_STRIDES}, "
                                  f"got {[f.stride for f in skips]}")
        x, outs = bottleneck, []
        for i, stage in enumerate(self.stages):
            x = stage(x, skips[i] if i < len(skips) else None)
            outs.append(x)
        return (x, outs) if return_stages else x
