"""Dataset manifests and deterministic 3-fold assignment.

Dataset layout: ``<root>/images/<stem>.<png|jpg|jpeg|tif|tiff>`` paired with
``<root>/masks/<stem>.png`` (single-channel, pixel value = source class id).

Manifest file (UTF-8 text)::

    # acsseg-manifest v1
    # kind: multiclass
    # seed: 7
    # target_size: 512 512
    # class: 0 background 0
    # class: 1 tumor 1
    ...
    image_path<TAB>mask_path<TAB>fold

``class`` lines give the contiguous training id, the name, and the pixel
value it is read from in the mask files.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from ..errors import DataError

MANIFEST_VERSION = 1
NUM_FOLDS = 3
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".tif", ".tiff")

# Source mask values. Binary masks may use 255 for the foreground.
BINARY_CLASSES = (("background", (0,)), ("tumor", (1, 255)))
MULTICLASS_CLASSES = (("background", (0,)), ("tumor", (1,)), ("stroma", (2,)), ("epidermis", (3,)),
                      ("necrosis", (4,)), ("blood_vessel", (5,)))
EXCLUDED_CLASSES = ("necrosis",)
DEFAULT_TARGET = {"binary": (256, 256), "multiclass": (512, 512)}


@dataclass(frozen=True)
class ClassEntry:
    class_id: int
    name: str
    source_values: Tuple[int, ...]


@dataclass(frozen=True)
class Record:
    image_path: str
    mask_path: str
    fold: int


@dataclass
class DatasetManifest:
    records: List[Record]
    class_table: List[ClassEntry]
    target_size: Tuple[int, int]
    seed: int
    kind: str = "binary"

    def __post_init__(self):
        paths = [r.image_path for r in self.records]
        if len(set(paths)) != len(paths):
            raise DataError("manifest contains duplicate image paths")
        for r in self.records:
            if r.fold not in range(NUM_FOLDS):
                raise DataError(f"record {r.image_path} has invalid fold {r.fold}")
        if [c.class_id for c in self.class_table] != list(range(len(self.class_table))):
            raise DataError("class ids must be contiguous from 0")

    @property
    def num_classes(self) -> int:
        return len(self.class_table)

    @property
    def class_names(self) -> List[str]:
        return [c.name for c in self.class_table]

    def label_lut(self) -> np.ndarray:
        """Lookup table from 8-bit mask value to class id (-1 = unknown)."""
        lut = np.full(256, -1, np.int64)
        for c in self.class_table:
            for v in c.source_values:
                lut[v] = c.class_id
        return lut

    def fold_sizes(self) -> List[int]:
        return [sum(r.fold == k for r in self.records) for k in range(NUM_FOLDS)]

    def to_text(self) -> str:
        lines = [f"# acsseg-manifest v{MANIFEST_VERSION}", f"# kind: {self.kind}", f"# seed: {self.seed}",
                 f"# target_size: {self.target_size[0]} {self.target_size[1]}"]
        for c in self.class_table:
            lines.append(f"# class: {c.class_id} {c.name} {','.join(map(str, c.source_values))}")
        lines += [f"{r.image_path}\t{r.mask_path}\t{r.fold}" for r in self.records]
        return "\n".join(lines) + "\n"

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_text(), encoding="utf-8")
        return path

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
        return cls.from_text(text)

    @classmethod
    def from_text(cls, text: str) -> "DatasetManifest":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# acsseg-manifest v"):
            raise DataError("not an acsseg manifest")
        version = int(lines[0].rsplit("v", 1)[1])
        if version != MANIFEST_VERSION:
            raise DataError(f"unsupported manifest version {version}")
        kind, seed, size, classes, records = "binary", 0, None, [], []
        for line in lines[1:]:
            if not line.strip():
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition(":")
                val = val.strip()
                if key == "kind":
                    kind = val
                elif key == "seed":
                    seed = int(val)
                elif key == "target_size":
                    h, w = val.split()
                    size = (int(h), int(w))
                elif key == "class":
                    cid, name, src = val.split()
                    classes.append(ClassEntry(int(cid), name, tuple(int(s) for s in src.split(","))))
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"bad manifest record line: {line!r}")
            records.append(Record(parts[0], parts[1], int(parts[2])))
        if size is None:
            raise DataError("manifest missing target_size")
        return cls(records, classes, size, seed, kind)


def class_table_for(kind: str, excluded: Sequence[str] = EXCLUDED_CLASSES) -> Tuple[List[ClassEntry], set]:
    """Contiguous class table for ``kind`` and the set of mask values that exclude a record."""
    if kind == "binary":
        return [ClassEntry(i, n, v) for i, (n, v) in enumerate(BINARY_CLASSES)], set()
    if kind != "multiclass":
        raise DataError(f"unknown dataset kind {kind!r}")
    table, drop = [], set()
    for name, values in MULTICLASS_CLASSES:
        if name in excluded:
            drop.update(values)
        else:
            table.append(ClassEntry(len(table), name, values))
    return table, drop


def pair_files(root) -> List[Tuple[Path, Path]]:
    root = Path(root)
    img_dir, mask_dir = root / "images", root / "masks"
    if not root.is_dir():
        raise DataError(f"dataset root does not exist: {root}")
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise DataError(f"dataset root {root} must contain images/ and masks/")
    images = {p.stem: p for p in sorted(img_dir.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}
    masks = {p.stem: p for p in sorted(mask_dir.iterdir()) if p.suffix.lower() == ".png"}
    unpaired = sorted(str(images[s]) for s in images.keys() - masks.keys())
    unpaired += sorted(str(masks[s]) for s in masks.keys() - images.keys())
    if unpaired:
        raise DataError("unpaired files: " + ", ".join(unpaired))
    return [(images[s], masks[s]) for s in sorted(images)]


def assign_folds(n: int, seed: int, num_folds: int = NUM_FOLDS) -> List[int]:
    """Seeded shuffle then round-robin: record ``order[k]`` goes to fold ``k % num_folds``."""
    order = np.random.default_rng(seed).permutation(n)
    folds = [0] * n
    for pos, idx in enumerate(order):
        folds[int(idx)] = pos % num_folds
    return folds


def build_manifest(root, kind: str = "binary", seed: int = 0,
                   target_size: Optional[Tuple[int, int]] = None,
                   excluded: Sequence[str] = EXCLUDED_CLASSES) -> DatasetManifest:
    """Pair, validate, filter and fold-assign a dataset directory.

    For the multiclass kind, any record whose mask contains an excluded class
    (necrosis by default) is dropped and that class removed from the table.
    Paths are stored resolved (absolute).
    """
    table, drop = class_table_for(kind, excluded)
    known = {v for c in table for v in c.source_values} | drop
    kept, bad = [], []
    for img, mask in pair_files(root):
        values = set(np.unique(_read_mask_raw(mask)).tolist())
        unknown = values - known
        if unknown:
            bad.append(f"{mask} (labels {sorted(unknown)})")
            continue
        if values & drop:
            continue
        kept.append((img, mask))
    if bad:
        raise DataError("unknown labels in masks: " + ", ".join(bad))
    folds = assign_folds(len(kept), seed)
    records = [Record(str(i.resolve()), str(m.resolve()), f) for (i, m), f in zip(kept, folds)]
    return DatasetManifest(records, table, tuple(target_size or DEFAULT_TARGET[kind]), seed, kind)


def fold_iterator(manifest: DatasetManifest, fold_id: int, split: str = "val") -> Iterator[Record]:
    if fold_id not in range(NUM_FOLDS):
        raise DataError(f"fold_id must be in 0..{NUM_FOLDS - 1}, got {fold_id}")
    if split not in ("train", "val"):
        raise DataError(f"split must be 'train' or 'val', got {split!r}")
    for r in manifest.records:
        if (r.fold == fold_id) == (split == "val"):
            yield r


def _read_mask_raw(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "P", "1", "I;16", "I"):
                im = im.convert("L")
            return np.array(im)
    except OSError as exc:
        raise DataError(f"cannot decode mask {path}: {exc}") from exc
