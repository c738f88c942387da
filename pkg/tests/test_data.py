import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from acsseg.data import (AugmentConfig, DatasetManifest, augment, build_manifest, fold_iterator,
                         load_sample, sample_rng, write_synthetic_dataset)
from acsseg.data.augment import hflip, vflip
from acsseg.data.io import Sample, overlay, palette_for, resize_mask, save_mask
from acsseg.data.manifest import assign_folds
from acsseg.errors import ConfigError, DataError

# sha256 of image+mask bytes for the pinned all-transforms sample below
AUGMENT_GOLDEN = "9fccc0c0825e9ef06259ee63505db09618e92bc891a8789270b52d32e80aed17"


def make_sample(seed=11, size=32, k=3):
    r = np.random.default_rng(seed)
    return Sample(r.random((3, size, size), dtype=np.float32), r.integers(0, k, (size, size)))


# --- manifest ---------------------------------------------------------------

def test_fold_assignment_is_seeded(tmp_path):
    root = write_synthetic_dataset(tmp_path / "d", 6, seed=0)
    a = build_manifest(root, seed=5, target_size=(64, 64))
    b = build_manifest(root, seed=5, target_size=(64, 64))
    assert a.to_text() == b.to_text()
    assert [r.fold for r in a.records] == assign_folds(6, 5)


def test_nine_records_split_evenly(binary_manifest):
    assert binary_manifest.fold_sizes() == [3, 3, 3]
    assert len(list(fold_iterator(binary_manifest, 0, "val"))) == 3
    assert len(list(fold_iterator(binary_manifest, 0, "train"))) == 6


@settings(max_examples=30, deadline=None)
@given(n=st.integers(0, 40), seed=st.integers(0, 2**31 - 1))
def test_folds_partition(n, seed):
    folds = assign_folds(n, seed)
    sizes = [folds.count(k) for k in range(3)]
    assert sum(sizes) == n and max(sizes) - min(sizes) <= 1


def test_val_folds_partition_records(binary_manifest):
    vals = [r.image_path for k in range(3) for r in fold_iterator(binary_manifest, k, "val")]
    assert sorted(vals) == sorted(r.image_path for r in binary_manifest.records)
    for k in range(3):
        tr = {r.image_path for r in fold_iterator(binary_manifest, k, "train")}
        va = {r.image_path for r in fold_iterator(binary_manifest, k, "val")}
        assert not tr & va


def test_fold_iterator_rejects_bad_args(binary_manifest):
    with pytest.raises(DataError):
        list(fold_iterator(binary_manifest, 3))
    with pytest.raises(DataError):
        list(fold_iterator(binary_manifest, 0, "test"))


def test_necrosis_images_dropped(tmp_path):
    root = write_synthetic_dataset(tmp_path / "m", 20, "multiclass", (32, 32), seed=1, n_excluded=4)
    m = build_manifest(root, "multiclass", seed=0)
    assert len(m.records) == 16
    assert "necrosis" not in m.class_names and m.num_classes == 5
    assert m.target_size == (512, 512)


def test_manifest_text_roundtrip(binary_manifest, tmp_path):
    path = binary_manifest.write(tmp_path / "m.txt")
    back = DatasetManifest.read(path)
    assert back == binary_manifest
    assert path.read_text().startswith("# acsseg-manifest v1\n")


def test_manifest_rejects_garbage(tmp_path):
    with pytest.raises(DataError):
        DatasetManifest.from_text("hello\n")
    with pytest.raises(DataError):
        DatasetManifest.read(tmp_path / "missing.txt")


def test_unpaired_files_reported(binary_root):
    (binary_root / "masks" / "img_0000.png").unlink()
    with pytest.raises(DataError, match="img_0000"):
        build_manifest(binary_root)


def test_unknown_mask_labels_reported(binary_root):
    Image.fromarray(np.full((64, 64), 7, np.uint8), "L").save(binary_root / "masks" / "img_0002.png")
    with pytest.raises(DataError, match="img_0002"):
        build_manifest(binary_root)


def test_binary_255_maps_to_tumor(tmp_path):
    root = tmp_path / "b"
    (root / "images").mkdir(parents=True)
    (root / "masks").mkdir()
    Image.fromarray(np.zeros((32, 32, 3), np.uint8)).save(root / "images" / "a.png")
    mask = np.zeros((32, 32), np.uint8)
    mask[:8] = 255
    Image.fromarray(mask, "L").save(root / "masks" / "a.png")
    m = build_manifest(root, target_size=(32, 32))
    s = load_sample(m.records[0], m.target_size, m)
    assert set(np.unique(s.mask)) == {0, 1} and s.mask[:8].all()


# --- loading ----------------------------------------------------------------

def test_resize_to_target(tmp_path):
    root = write_synthetic_dataset(tmp_path / "big", 1, size=(512, 512), seed=2)
    m = build_manifest(root, target_size=(256, 256))
    s = load_sample(m.records[0], (256, 256), m)
    assert s.image.shape == (3, 256, 256) and s.mask.shape == (256, 256)
    assert s.image.dtype == np.float32 and s.mask.dtype == np.int64


def test_identity_size_is_lossless(binary_manifest):
    r = binary_manifest.records[0]
    s = load_sample(r, (64, 64), binary_manifest)
    raw = np.asarray(Image.open(r.image_path).convert("RGB"), np.float32).transpose(2, 0, 1) / 255
    assert np.array_equal(s.image, raw)
    assert np.array_equal(s.mask, binary_manifest.label_lut()[np.asarray(Image.open(r.mask_path))])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 1000), h=st.integers(1, 40), w=st.integers(1, 40))
def test_nearest_resize_keeps_label_set(seed, h, w):
    mask = np.random.default_rng(seed).integers(0, 2, (17, 23))
    assert set(np.unique(resize_mask(mask, (h, w)))) <= {0, 1}


# --- augmentation -----------------------------------------------------------

def test_zero_probabilities_are_identity():
    s = make_sample()
    out = augment(s, AugmentConfig.identity(), sample_rng(0, 0, 0))
    assert np.array_equal(out.image, s.image) and np.array_equal(out.mask, s.mask)
    assert out.image is not s.image


def test_flips_are_involutions():
    s = make_sample()
    for f in (hflip, vflip):
        twice = f(f(s))
        assert np.array_equal(twice.image, s.image) and np.array_equal(twice.mask, s.mask)


def test_augment_golden_sample():
    cfg = AugmentConfig(flip_prob=1, rotate_prob=1, scale_prob=1, color_prob=1, seed=5)
    out = augment(make_sample(), cfg, sample_rng(5, 0, 0))
    assert hashlib.sha256(out.image.tobytes() + out.mask.tobytes()).hexdigest() == AUGMENT_GOLDEN


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), epoch=st.integers(0, 5), index=st.integers(0, 50))
def test_augment_repeatable_and_closed(seed, epoch, index):
    s = make_sample(seed % 97)
    cfg = AugmentConfig(seed=seed)
    a = augment(s, cfg, sample_rng(seed, epoch, index))
    b = augment(s, cfg, sample_rng(seed, epoch, index))
    assert np.array_equal(a.image, b.image) and np.array_equal(a.mask, b.mask)
    assert a.image.shape == s.image.shape and a.mask.shape == s.mask.shape
    assert set(np.unique(a.mask)) <= set(np.unique(s.mask)) | {0}
    assert a.image.min() >= 0 and a.image.max() <= 1


def test_augment_config_validation():
    with pytest.raises(ConfigError) as exc:
        AugmentConfig(flip_prob=2, hue_delta=0.9)
    assert len(exc.value.problems) == 2


# --- output -----------------------------------------------------------------

def test_mask_png_is_8bit_single_channel(tmp_path):
    save_mask(tmp_path / "m.png", np.array([[0, 1], [2, 3]]))
    im = Image.open(tmp_path / "m.png")
    assert im.mode == "L" and np.asarray(im).tolist() == [[0, 1], [2, 3]]


def test_overlay_blend():
    img = np.zeros((2, 2, 3), np.uint8)
    out = overlay(img, np.array([[0, 1], [1, 0]]), ["background", "tumor"], alpha=1.0)
    assert out.dtype == np.uint8 and out[0, 1].tolist() == palette_for(["background", "tumor"])[1].tolist()
