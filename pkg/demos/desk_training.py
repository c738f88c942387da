# A small end-to-end run on synthetic tiles: manifest, one fold of training,
# evaluation and a predicted mask.
import tempfile
from pathlib import Path

import numpy as np

from acsseg.cli import predict_image
from acsseg.data import build_manifest, fold_iterator, write_synthetic_dataset
from acsseg.data.io import overlay, read_image, save_mask, save_rgb
from acsseg.model import ModelConfig
from acsseg.training import TrainConfig, fit

work = Path(tempfile.mkdtemp(prefix="acsseg-demo-"))
root = write_synthetic_dataset(work / "data", 12, "binary", (64, 64), seed=0)
manifest = build_manifest(root, "binary", seed=0, target_size=(64, 64))
print("fold sizes", manifest.fold_sizes())

res = fit(manifest, 0, ModelConfig.from_scale("tiny"),
          TrainConfig(epochs=15, batch_size=4, learning_rate=3e-3), work / "run")
print("loss %.3f -> %.3f" % (res.losses[0], res.losses[-1]))
for epoch, r in enumerate(res.reports, 1):
    if epoch % 5 == 0:
        print(r.table_row(f"epoch {epoch:2d}"))

rec = next(fold_iterator(manifest, 0, "val"))
rgb = np.asarray(read_image(rec.image_path))
mask = predict_image(res.state.model, rgb)
save_mask(work / "pred_mask.png", mask)
save_rgb(work / "pred_overlay.png", overlay(rgb, mask, manifest.class_names))
print("wrote", work)
