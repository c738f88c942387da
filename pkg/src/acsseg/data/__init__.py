from .augment import AugmentConfig, augment, hflip, rescale, rotate, sample_rng, vflip
from .io import PALETTE, Sample, colorize, load_sample, overlay, palette_for, save_mask
from .manifest import (ClassEntry, DatasetManifest, Record, assign_folds, build_manifest,
                       class_table_for, fold_iterator)
from .synthetic import write_synthetic_dataset

__all__ = [
    "AugmentConfig", "ClassEntry", "DatasetManifest", "PALETTE", "Record", "Sample", "assign_folds",
    "augment", "build_manifest", "class_table_for", "colorize", "fold_iterator", "hflip",
    "load_sample", "overlay", "palette_for", "rescale", "rotate", "sample_rng", "save_mask", "vflip",
    "write_synthetic_dataset",
]
