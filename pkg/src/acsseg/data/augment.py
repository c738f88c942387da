"""Joint geometric + image-only intensity augmentation.

Random draws are taken in a fixed order whether or not a transform fires, so
the RNG stream consumed per sample is constant and a given seed always yields
the same output.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
import torch
import torchvision.transforms.v2.functional as TF
from torchvision.transforms import InterpolationMode

from ..errors import ConfigError
from .io import Sample


@dataclass(frozen=True)
class AugmentConfig:
    flip_prob: float = 0.5
    rotate_prob: float = 0.5
    scale_prob: float = 0.5
    color_prob: float = 0.5
    rotate_degrees: Tuple[float, float] = (-30.0, 30.0)
    scale_range: Tuple[float, float] = (0.8, 1.2)
    hue_delta: float = 0.05
    saturation_range: Tuple[float, float] = (0.8, 1.2)
    brightness_range: Tuple[float, float] = (0.8, 1.2)
    contrast_range: Tuple[float, float] = (0.8, 1.2)
    seed: int = 0

    def __post_init__(self):
        for name in ("rotate_degrees", "scale_range", "saturation_range", "brightness_range",
                     "contrast_range"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        p = []
        for name in ("flip_prob", "rotate_prob", "scale_prob", "color_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                p.append(f"{name} must lie in [0, 1]")
        lo, hi = self.rotate_degrees
        if not -180.0 <= lo <= hi <= 180.0:
            p.append("rotate_degrees must satisfy -180 <= lo <= hi <= 180")
        for name in ("scale_range", "saturation_range", "brightness_range", "contrast_range"):
            lo, hi = getattr(self, name)
            if not 0.0 < lo <= hi <= 4.0:
                p.append(f"{name} must satisfy 0 < lo <= hi <= 4")
        if not 0.0 <= self.hue_delta <= 0.5:
            p.append("hue_delta must lie in [0, 0.5]")
        if p:
            raise ConfigError(p)

    @classmethod
    def identity(cls, seed: int = 0) -> "AugmentConfig":
        return cls(flip_prob=0.0, rotate_prob=0.0, scale_prob=0.0, color_prob=0.0, seed=seed)


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, epoch, sample index); worker count cannot change results."""
    return np.random.default_rng([seed, epoch, index])


def hflip(sample: Sample) -> Sample:
    return Sample(sample.image[:, :, ::-1].copy(), sample.mask[:, ::-1].copy())


def vflip(sample: Sample) -> Sample:
    return Sample(sample.image[:, ::-1, :].copy(), sample.mask[::-1, :].copy())


def rotate(sample: Sample, degrees: float) -> Sample:
    img = TF.rotate(torch.from_numpy(sample.image), degrees, InterpolationMode.BILINEAR, fill=0.0)
    mask = TF.rotate(torch.from_numpy(sample.mask)[None], degrees, InterpolationMode.NEAREST, fill=0)
    return Sample(img.numpy(), mask[0].numpy())


def _fit(t: torch.Tensor, h: int, w: int) -> torch.Tensor:
    """Centre-crop or zero-pad the last two dims to (h, w)."""
    th, tw = t.shape[-2:]
    if th >= h and tw >= w:
        return TF.center_crop(t, [h, w])
    top, left = (h - th) // 2, (w - tw) // 2
    return TF.pad(t, [left, top, w - tw - left, h - th - top], fill=0)


def rescale(sample: Sample, factor: float) -> Sample:
    _, h, w = sample.image.shape
    nh, nw = max(1, round(h * factor)), max(1, round(w * factor))
    img = TF.resize(torch.from_numpy(sample.image), [nh, nw], InterpolationMode.BILINEAR, antialias=False)
    mask = TF.resize(torch.from_numpy(sample.mask)[None], [nh, nw], InterpolationMode.NEAREST)
    return Sample(_fit(img, h, w).numpy(), _fit(mask, h, w)[0].numpy())


def color_jitter(image: np.ndarray, brightness=1.0, contrast=1.0, saturation=1.0, hue=0.0) -> np.ndarray:
    t = torch.from_numpy(np.ascontiguousarray(image))
    t = TF.adjust_brightness(t, brightness)
    t = TF.adjust_contrast(t, contrast)
    t = TF.adjust_saturation(t, saturation)
    t = TF.adjust_hue(t, hue)
    return t.clamp(0.0, 1.0).numpy()


def augment(sample: Sample, cfg: AugmentConfig, rng: np.random.Generator) -> Sample:
    u = rng.random(5)
    angle = rng.uniform(*cfg.rotate_degrees)
    factor = rng.uniform(*cfg.scale_range)
    b = rng.uniform(*cfg.brightness_range)
    c = rng.uniform(*cfg.contrast_range)
    s = rng.uniform(*cfg.saturation_range)
    h = rng.uniform(-cfg.hue_delta, cfg.hue_delta)

    out = sample
    if u[0] < cfg.flip_prob:
        out = hflip(out)
    if u[1] < cfg.flip_prob:
        out = vflip(out)
    if u[2] < cfg.rotate_prob:
        out = rotate(out, angle)
    if u[3] < cfg.scale_prob:
        out = rescale(out, factor)
    if u[4] < cfg.color_prob:
        out = Sample(color_jitter(out.image, b, c, s, h), out.mask)
    if out is sample:
        out = Sample(sample.image.copy(), sample.mask.copy())
    return Sample(np.ascontiguousarray(out.image, np.float32), np.ascontiguousarray(out.mask, np.int64))
