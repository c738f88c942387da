from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List

import torch
import torch.nn as nn

from ..errors import InputError
from .cbam import CBAM, SpatialAttention, ChannelAttention
from .cnn import ResNetEncoder
from .config import ModelConfig
from .decoder import UNetDecoder
from .featuremap import FeatureMap
from .fusion import FusionBlock
from .vit import MixTransformerEncoder


@dataclass
class ForwardTrace:
    cnn: List[FeatureMap]
    vit: List[FeatureMap]
    fused: List[FeatureMap]
    decoder: List[FeatureMap]
    logits: torch.Tensor


class ACSSegNet(nn.Module):
    """Dual-encoder segmentation network.

    A ResNet encoder and a mix-transformer encoder run in parallel; each
    transformer stage is upsampled x2 and joined with a CNN level
    (``config.skip_pairing``), gated by CBAM unless ``fusion_mode`` is
    ``"concat_only"`` (the CS-SegNet ablation). The last CNN stage is the
    bottleneck of a five-stage UNet decoder.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        self.cnn_encoder = ResNetEncoder(c.input_channels, c.cnn_widths, c.cnn_depths)
        self.vit_encoder = MixTransformerEncoder(
            c.input_channels, c.vit_widths, c.vit_depths, c.vit_heads, c.vit_sr_ratios,
            c.vit_ffn_expansion, c.drop_path, c.attn_drop)
        attention = c.fusion_mode == "attention"
        self.fusion = nn.ModuleList(
            FusionBlock(c.vit_widths[i], c.cnn_widths[c.skip_pairing[i]], attention,
                        c.cbam_reduction, c.cbam_spatial_kernel, c.upsample_mode)
            for i in range(4))
        self.decoder = UNetDecoder(c.cnn_widths[4], c.fused_widths[::-1], c.decoder_widths,
                                   c.upsample_mode)
        self.head = nn.Conv2d(c.decoder_widths[-1], c.num_classes, 1)
        init_weights(self)

    def check_input(self, x):
        if not torch.is_tensor(x) or x.ndim != 4:
            raise InputError(f"expected a (batch, channels, H, W) tensor, got {getattr(x, 'shape', type(x))}")
        if x.shape[1] != self.config.input_channels:
            raise InputError(f"expected {self.config.input_channels} input channels, got {x.shape[1]}")
        h, w = x.shape[-2:]
        if h % 32 or w % 32 or h == 0 or w == 0:
            raise InputError(f"input height and width must be positive multiples of 32, got {h}x{w}")
        if not torch.isfinite(x).all():
            raise InputError("input contains NaN or Inf")

    def trace(self, x) -> ForwardTrace:
        self.check_input(x)
        r = self.cnn_encoder(x)
        s = self.vit_encoder(x)
        fused = [blk(s[i], r[j]) for i, (blk, j) in enumerate(zip(self.fusion, self.config.skip_pairing))]
        y, stages = self.decoder(r[4], fused[::-1], return_stages=True)
        return ForwardTrace(r, s, fused, stages, self.head(y.data))

    def forward(self, x):
        return self.trace(x).logits

    def cbam_modules(self) -> List[CBAM]:
        return [m for m in self.modules() if isinstance(m, CBAM)]


def build_model(config: ModelConfig, dtype=torch.float32) -> ACSSegNet:
    return ACSSegNet(config).to(dtype)


def init_weights(model: nn.Module):
    for name, m in model.named_modules():
        if isinstance(m, nn.Conv2d):
            fan_out = m.kernel_size[0] * m.kernel_size[1] * m.out_channels // m.groups
            nn.init.normal_(m.weight, 0.0, math.sqrt(2.0 / fan_out))
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Linear):
            nn.init.trunc_normal_(m.weight, std=0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.BatchNorm2d, nn.LayerNorm)):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
    # gate convs feed a sigmoid; start them centred
    for m in model.modules():
        if isinstance(m, (ChannelAttention, SpatialAttention)):
            for conv in m.modules():
                if isinstance(conv, nn.Conv2d):
                    nn.init.zeros_(conv.bias)


def param_count(model: nn.Module, trainable_only: bool = True) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad or not trainable_only)


def param_report(model: nn.Module, trainable_only: bool = True) -> Dict[str, int]:
    """Parameter subtotals per top-level block, plus ``total``."""
    groups: Dict[str, int] = {n: 0 for n, _ in model.named_children()}
    for name, p in model.named_parameters():
        if trainable_only and not p.requires_grad:
            continue
        top = name.split(".", 1)[0]
        groups[top] = groups.get(top, 0) + p.numel()
    groups["total"] = sum(groups.values())
    return groups
