"""Small synthetic tissue-like corpora for tests, demos and smoke runs."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

# Mean RGB per source mask value (H&E-ish tints, distinct enough to learn).
_TINTS = {0: (235, 220, 230), 1: (120, 40, 110), 2: (220, 120, 160), 3: (170, 90, 60),
          4: (90, 90, 90), 5: (200, 40, 40)}


def synthetic_pair(size, labels, rng, blobs=4):
    """Random ellipses painted with ``labels`` on a background of 0; returns (rgb uint8, mask uint8)."""
    h, w = size
    mask = np.zeros((h, w), np.uint8)
    yy, xx = np.mgrid[0:h, 0:w]
    for k in range(blobs):
        lab = labels[k % len(labels)]
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(0.1, 0.3) * h, rng.uniform(0.1, 0.3) * w
        mask[((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0] = lab
    tint = np.array([_TINTS.get(int(v), (128, 128, 128)) for v in range(256)], np.float32)
    rgb = tint[mask] + rng.normal(0, 8, (h, w, 3))
    return np.clip(rgb, 0, 255).astype(np.uint8), mask


def write_synthetic_dataset(root, n: int, kind: str = "binary", size=(64, 64), seed: int = 0,
                            n_excluded: int = 0, excluded_value: int = 4) -> Path:
    """Write ``n`` image/mask pairs under ``root/images`` and ``root/masks``.

    For ``multiclass``, exactly ``n_excluded`` masks contain ``excluded_value``
    (the necrosis id) and the rest use the other five classes.
    """
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n):
        if kind == "binary":
            labels = [1]
        else:
            labels = [1, 2, 3, 5]
            if i < n_excluded:
                labels = [excluded_value] + labels
        rgb, mask = synthetic_pair(size, labels, rng)
        if i < n_excluded and kind != "binary":
            mask[:2, :2] = excluded_value
        Image.fromarray(rgb, "RGB").save(root / "images" / f"img_{i:04d}.png")
        Image.fromarray(mask, "L").save(root / "masks" / f"img_{i:04d}.png")
    return root
