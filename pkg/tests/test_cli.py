import time
from pathlib import Path

import numpy as np
import pytest
import torch
import yaml
from PIL import Image

from acsseg.cli import main, predict_image
from acsseg.data import write_synthetic_dataset
from acsseg.model import ACSSegNet, load_arrays, load_checkpoint

# desk-scale bound for one tiny epoch on six 256x256 images, single CPU core
TRAIN_SMOKE_SECONDS = 60.0


@pytest.fixture
def six_root(tmp_path):
    return write_synthetic_dataset(tmp_path / "six", 6, size=(64, 64), seed=5)


def folds(root, *extra):
    return main(["folds", "--root", str(root), *extra])


def train(manifest, out, *extra):
    rc = main(["train", "--manifest", str(manifest), "--scale", "tiny", "--epochs", "1",
               "--out", str(out), *extra])
    runs = sorted(Path(out).iterdir(), key=lambda p: p.stat().st_mtime)
    return rc, runs[-1]


def test_folds_is_byte_identical(six_root, tmp_path, capsys):
    assert folds(six_root, "--seed", "7", "--out", str(tmp_path / "a.txt")) == 0
    assert folds(six_root, "--seed", "7", "--out", str(tmp_path / "b.txt")) == 0
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
    assert "fold 2: 2" in capsys.readouterr().out


def test_folds_multiclass(tmp_path):
    root = write_synthetic_dataset(tmp_path / "mc", 7, "multiclass", (32, 32), seed=1, n_excluded=1)
    assert folds(root, "--kind", "multiclass", "--seed", "7") == 0
    text = (root / "manifest.txt").read_text()
    assert "# kind: multiclass" in text and len([l for l in text.splitlines() if l[0] != "#"]) == 6


def test_folds_missing_root(tmp_path, capsys):
    missing = tmp_path / "nope"
    assert folds(missing) == 3
    assert str(missing) in capsys.readouterr().err


def test_train_cs_has_no_cbam_keys(six_root, tmp_path):
    folds(six_root, "--target-size", "64", "64")
    rc, run = train(six_root / "manifest.txt", tmp_path / "runs", "--variant", "cs")
    assert rc == 0 and run.name.endswith("-seed0-fold0-cs")
    arrays, meta = load_arrays(run / "best.ckpt")
    assert arrays and not [k for k in arrays if "cbam" in k]
    cfg = yaml.safe_load((run / "config.yaml").read_text())
    assert cfg["model"]["fusion_mode"] == "concat_only" and cfg["model"]["num_classes"] == 2


def test_zero_learning_rate_keeps_init(six_root, tmp_path):
    folds(six_root, "--target-size", "64", "64")
    rc, run = train(six_root / "manifest.txt", tmp_path / "runs", "--set", "train.learning_rate=0")
    assert rc == 0
    model, _, _ = load_checkpoint(run / "last.ckpt")
    torch.manual_seed(0)
    init = ACSSegNet(model.config)
    for (name, a), b in zip(model.named_parameters(), init.parameters()):
        assert torch.equal(a, b), name


def test_train_smoke_time_bound(six_root, tmp_path):
    folds(six_root)  # default 256x256 target
    t0 = time.perf_counter()
    rc, run = train(six_root / "manifest.txt", tmp_path / "runs")
    assert rc == 0 and (run / "train.log").exists()
    assert time.perf_counter() - t0 < TRAIN_SMOKE_SECONDS


def test_run_dirs_never_overwrite(six_root, tmp_path):
    folds(six_root, "--target-size", "64", "64")
    out = tmp_path / "runs"
    for _ in range(2):
        assert main(["train", "--manifest", str(six_root / "manifest.txt"), "--scale", "tiny",
                     "--epochs", "0", "--out", str(out)]) == 0
    assert len(list(out.iterdir())) == 2


def test_config_errors_listed_together(six_root, tmp_path, capsys):
    folds(six_root, "--target-size", "64", "64")
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("train:\n  batch_size: 0\n  bogus: 1\nmodel:\n  cbam_spatial_kernel: 4\n")
    rc = main(["train", "--manifest", str(six_root / "manifest.txt"), "--config", str(cfg),
               "--out", str(tmp_path / "r")])
    err = capsys.readouterr().err
    assert rc == 2
    assert "train.bogus" in err and "batch_size" in err and "odd" in err


def test_eval_oracle_all_folds(binary_root, tmp_path, capsys):
    folds(binary_root, "--target-size", "64", "64")
    out = tmp_path / "rep"
    capsys.readouterr()
    assert main(["eval", "--manifest", str(binary_root / "manifest.txt"), "--oracle", "--all-folds",
                 "--out", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[:4] == [f"fold {k}  100.00 ± 0.00  100.00 ± 0.00" for k in range(3)] + \
        ["mean ± std  100.00 ± 0.00  100.00 ± 0.00"]
    assert "std_iou: 0.0" in (out / "report.txt").read_text()


def test_eval_checkpoint_and_predict(binary_root, tmp_path, capsys):
    folds(binary_root, "--target-size", "64", "64")
    manifest = binary_root / "manifest.txt"
    rc, run = train(manifest, tmp_path / "runs")
    assert rc == 0
    capsys.readouterr()
    assert main(["eval", "--manifest", str(manifest), "--checkpoint", str(run / "best.ckpt"),
                 "--fold", "0"]) == 0
    assert capsys.readouterr().out.startswith("fold 0  ")

    odd = tmp_path / "odd.png"
    Image.fromarray(np.random.default_rng(0).integers(0, 255, (50, 70, 3), np.uint8)).save(odd)
    out = tmp_path / "pred"
    assert main(["predict", "--checkpoint", str(run / "best.ckpt"), "--out", str(out), "--overlay",
                 str(odd), str(binary_root / "images")]) == 0
    mask = Image.open(out / "odd_mask.png")
    assert mask.mode == "L" and mask.size == (70, 50)
    assert set(np.unique(np.asarray(mask))) <= {0, 1}
    assert Image.open(out / "odd_overlay.png").mode == "RGB"
    assert len(list(out.glob("*_mask.png"))) == 10


def test_predict_image_pads_and_crops(tiny):
    model = ACSSegNet(tiny)
    rgb = np.zeros((33, 95, 3), np.uint8)
    assert predict_image(model, rgb).shape == (33, 95)


def test_params_command(capsys):
    assert main(["params", "--scale", "tiny"]) == 0
    assert capsys.readouterr().out.splitlines()[-1].split() == ["total", "271,516"]


def test_verify_subset_and_fault(capsys):
    assert main(["verify", "--only", "grad,metrics"]) == 0
    out = capsys.readouterr().out
    assert "2/2 checks passed" in out
    assert main(["verify", "--only", "shape", "--fault", "wrong-stride"]) == 1
    assert "FAIL" in capsys.readouterr().out


@pytest.mark.slow
def test_verify_fresh_checkout(capsys):
    assert main(["verify"]) == 0
