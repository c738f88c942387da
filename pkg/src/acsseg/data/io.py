"""Image/mask loading and writing."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np
from PIL import Image

from ..errors import DataError
from .manifest import DatasetManifest, Record, _read_mask_raw

# RGB colour per class name; red tumour, green vessels, blue stroma, black background.
PALETTE = {
    "background": (0, 0, 0),
    "tumor": (255, 0, 0),
    "blood_vessel": (0, 255, 0),
    "stroma": (0, 0, 255),
    "epidermis": (255, 255, 0),
    "necrosis": (255, 0, 255),
}
_FALLBACK = [(0, 255, 255), (255, 128, 0), (128, 0, 255), (128, 128, 128)]


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    mask: np.ndarray   # (H, W) int64 class ids

    def __post_init__(self):
        if self.image.ndim != 3 or self.mask.ndim != 2 or self.image.shape[1:] != self.mask.shape:
            raise DataError(f"image {self.image.shape} and mask {self.mask.shape} are not aligned")


def read_image(path) -> Image.Image:
    try:
        with Image.open(path) as im:
            return im.convert("RGB")
    except OSError as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc


def resize_image(img: Image.Image, size: Tuple[int, int]) -> np.ndarray:
    h, w = size
    if img.size != (w, h):
        img = img.resize((w, h), Image.BILINEAR)
    return np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0


def resize_mask(mask: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    h, w = size
    if mask.shape == (h, w):
        return mask.copy()
    if mask.min() < 0 or mask.max() > 255:
        raise DataError("mask labels must fit in 8 bits")
    im = Image.fromarray(mask.astype(np.uint8), mode="L").resize((w, h), Image.NEAREST)
    return np.asarray(im).astype(mask.dtype)


def load_sample(record: Record, target_size: Tuple[int, int], manifest: DatasetManifest) -> Sample:
    """Read an image/mask pair, map mask values to class ids, resize to ``target_size``.

    Images use bilinear resampling and are scaled to [0, 1]; masks use
    nearest-neighbour so no new label values appear.
    """
    if min(target_size) < 1:
        raise DataError(f"target size must be positive, got {target_size}")
    img = read_image(record.image_path)
    raw = _read_mask_raw(record.mask_path)
    if raw.shape != (img.size[1], img.size[0]):
        raise DataError(f"{record.mask_path}: mask size {raw.shape} != image size {img.size[::-1]}")
    labels = manifest.label_lut()[raw]
    if (labels < 0).any():
        raise DataError(f"{record.mask_path}: mask contains values outside the class table")
    return Sample(resize_image(img, target_size), resize_mask(labels, target_size))


def palette_for(class_names: Sequence[str]) -> np.ndarray:
    cols, extra = [], iter(_FALLBACK)
    for n in class_names:
        cols.append(PALETTE.get(n) or next(extra, (255, 255, 255)))
    return np.array(cols, np.uint8)


def save_mask(path, mask: np.ndarray):
    """Write class ids as an 8-bit single-channel PNG."""
    Image.fromarray(np.asarray(mask).astype(np.uint8), mode="L").save(path)


def colorize(mask: np.ndarray, class_names: Sequence[str]) -> np.ndarray:
    return palette_for(class_names)[np.asarray(mask)]


def overlay(image: np.ndarray, mask: np.ndarray, class_names: Sequence[str], alpha=0.5) -> np.ndarray:
    """Blend a colour-coded mask over an (H, W, 3) uint8 image."""
    col = colorize(mask, class_names).astype(np.float32)
    out = (1 - alpha) * image.astype(np.float32) + alpha * col
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def save_rgb(path, rgb: np.ndarray):
    Image.fromarray(np.asarray(rgb, np.uint8), mode="RGB").save(Path(path))
