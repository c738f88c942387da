from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Tuple

from ..errors import ConfigError

FUSION_MODES = ("attention", "concat_only")
SCALES = ("full", "tiny")

# Full scale: ResNet34-style CNN encoder, MiT-B2-style transformer encoder.
_FULL = dict(
    cnn_widths=(64, 64, 128, 256, 512),
    cnn_depths=(3, 4, 6, 3),
    vit_widths=(64, 128, 320, 512),
    vit_depths=(3, 4, 6, 3),
    vit_heads=(1, 2, 5, 8),
    cbam_reduction=16,
    decoder_widths=(256, 128, 64, 32, 16),
)

_TINY = dict(
    cnn_widths=(8, 8, 16, 32, 64),
    cnn_depths=(1, 1, 1, 1),
    vit_widths=(8, 16, 32, 64),
    vit_depths=(1, 1, 1, 1),
    vit_heads=(1, 1, 2, 2),
    cbam_reduction=4,
    decoder_widths=(32, 16, 8, 8, 8),
)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters for ACS-SegNet / CS-SegNet.

    ``skip_pairing[i]`` is the CNN level joined with transformer stage ``i``;
    the default pairs each transformer stage with the CNN level one stride
    finer, which the fusion block reaches with a x2 upsample.
    """

    num_classes: int = 2
    input_channels: int = 3
    cnn_widths: Tuple[int, ...] = _FULL["cnn_widths"]
    cnn_depths: Tuple[int, ...] = _FULL["cnn_depths"]
    vit_widths: Tuple[int, ...] = _FULL["vit_widths"]
    vit_depths: Tuple[int, ...] = _FULL["vit_depths"]
    vit_heads: Tuple[int, ...] = _FULL["vit_heads"]
    vit_sr_ratios: Tuple[int, ...] = (8, 4, 2, 1)
    vit_ffn_expansion: int = 4
    cbam_reduction: int = _FULL["cbam_reduction"]
    cbam_spatial_kernel: int = 7
    decoder_widths: Tuple[int, ...] = _FULL["decoder_widths"]
    fusion_mode: str = "attention"
    scale: str = "full"
    skip_pairing: Tuple[int, ...] = (0, 1, 2, 3)
    upsample_mode: str = "bilinear"
    drop_path: float = 0.0
    attn_drop: float = 0.0

    def __post_init__(self):
        for name in ("cnn_widths", "cnn_depths", "vit_widths", "vit_depths", "vit_heads",
                     "vit_sr_ratios", "decoder_widths", "skip_pairing"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        problems = self.problems()
        if problems:
            raise ConfigError(problems)

    @classmethod
    def from_scale(cls, scale: str = "full", **overrides) -> "ModelConfig":
        if scale not in SCALES:
            raise ConfigError(f"scale must be one of {SCALES}, got {scale!r}")
        preset = dict(_TINY if scale == "tiny" else _FULL)
        preset.update(overrides)
        return cls(scale=scale, **preset)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError([f"unknown model key: {k}" for k in unknown])
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    @property
    def fused_widths(self) -> Tuple[int, ...]:
        """Channel count of each fusion output F1..F4."""
        return tuple(self.vit_widths[i] + self.cnn_widths[self.skip_pairing[i]] for i in range(4))

    def problems(self) -> list:
        p = []
        lengths = dict(cnn_widths=5, cnn_depths=4, vit_widths=4, vit_depths=4, vit_heads=4,
                       vit_sr_ratios=4, decoder_widths=5, skip_pairing=4)
        for name, n in lengths.items():
            v = getattr(self, name)
            if len(v) != n:
                p.append(f"{name} must have {n} entries, got {len(v)}")
            elif any(x <= 0 for x in v) and name != "skip_pairing":
                p.append(f"{name} entries must be positive, got {v}")
        if self.num_classes < 2:
            p.append(f"num_classes must be >= 2, got {self.num_classes}")
        if self.input_channels < 1:
            p.append(f"input_channels must be >= 1, got {self.input_channels}")
        if self.fusion_mode not in FUSION_MODES:
            p.append(f"fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}")
        if self.scale not in SCALES:
            p.append(f"scale must be one of {SCALES}, got {self.scale!r}")
        if self.upsample_mode not in ("bilinear", "nearest"):
            p.append(f"upsample_mode must be 'bilinear' or 'nearest', got {self.upsample_mode!r}")
        if self.cbam_spatial_kernel < 1 or self.cbam_spatial_kernel % 2 == 0:
            p.append(f"cbam_spatial_kernel must be a positive odd int, got {self.cbam_spatial_kernel}")
        if self.cbam_reduction < 1:
            p.append(f"cbam_reduction must be >= 1, got {self.cbam_reduction}")
        if self.vit_ffn_expansion < 1:
            p.append(f"vit_ffn_expansion must be >= 1, got {self.vit_ffn_expansion}")
        if not 0.0 <= self.drop_path < 1.0 or not 0.0 <= self.attn_drop < 1.0:
            p.append("drop_path and attn_drop must lie in [0, 1)")
        if len(self.vit_widths) == 4 and len(self.vit_heads) == 4:
            for i, (w, h) in enumerate(zip(self.vit_widths, self.vit_heads)):
                if h > 0 and w % h:
                    p.append(f"vit_widths[{i}]={w} not divisible by vit_heads[{i}]={h}")
        if len(self.skip_pairing) == 4 and any(not 0 <= j < 5 for j in self.skip_pairing):
            p.append(f"skip_pairing entries must index CNN levels 0..4, got {self.skip_pairing}")
        if (self.fusion_mode == "attention" and not p):
            for i, c in enumerate(self.fused_widths):
                if c % self.cbam_reduction:
                    p.append(f"cbam_reduction={self.cbam_reduction} does not divide fused width "
                             f"F{i + 1}={c}")
        return p
