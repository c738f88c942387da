"""Micro-averaged IoU / Dice.

TP/FP/FN are summed per class over the whole validation set, as if all
images were one large image; per-class scores are then averaged over the
classes. Classes with an empty denominator (never present, never predicted)
score NaN and are left out of the class mean.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

REPORT_VERSION = 1


def _as_numpy(a):
    if hasattr(a, "detach"):
        a = a.detach().cpu().numpy()
    return np.asarray(a)


def predict_labels(logits):
    """Argmax over the class axis (axis 1); ties go to the lower class index."""
    if hasattr(logits, "argmax") and hasattr(logits, "detach"):
        return logits.detach().argmax(dim=1)
    return np.asarray(logits).argmax(axis=1)


@dataclass
class ConfusionAccumulator:
    num_classes: int
    tp: np.ndarray = None
    fp: np.ndarray = None
    fn: np.ndarray = None
    pixels_seen: int = 0

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        for name in ("tp", "fp", "fn"):
            v = getattr(self, name)
            v = np.zeros(self.num_classes, np.int64) if v is None else np.asarray(v, np.int64).copy()
            if v.shape != (self.num_classes,):
                raise ValueError(f"{name} must have shape ({self.num_classes},)")
            setattr(self, name, v)

    def accumulate(self, pred_mask, true_mask) -> "ConfusionAccumulator":
        pred = _as_numpy(pred_mask)
        true = _as_numpy(true_mask)
        if pred.shape != true.shape:
            raise ValueError(f"mask shapes differ: {pred.shape} vs {true.shape}")
        k = self.num_classes
        pred = pred.astype(np.int64, copy=False).ravel()
        true = true.astype(np.int64, copy=False).ravel()
        for name, m in (("pred", pred), ("true", true)):
            if m.size and (m.min() < 0 or m.max() >= k):
                raise ValueError(f"{name} mask has labels outside [0, {k})")
        cm = np.bincount(true * k + pred, minlength=k * k).reshape(k, k)
        diag = np.diag(cm)
        self.tp += diag
        self.fp += cm.sum(axis=0) - diag
        self.fn += cm.sum(axis=1) - diag
        self.pixels_seen += int(true.size)
        return self

    def merge(self, other: "ConfusionAccumulator") -> "ConfusionAccumulator":
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge accumulators with different class counts")
        return ConfusionAccumulator(self.num_classes, self.tp + other.tp, self.fp + other.fp,
                                    self.fn + other.fn, self.pixels_seen + other.pixels_seen)

    __add__ = merge

    def iou(self, c: int) -> float:
        return micro_iou(self, c)

    def dice(self, c: int) -> float:
        return micro_dice(self, c)

    def report(self, class_names: Optional[Sequence[str]] = None) -> "MetricReport":
        k = self.num_classes
        names = list(class_names) if class_names is not None else [f"class{i}" for i in range(k)]
        if len(names) != k:
            raise ValueError(f"{len(names)} class names for {k} classes")
        iou = [micro_iou(self, c) for c in range(k)]
        dice = [micro_dice(self, c) for c in range(k)]
        return MetricReport(names, iou, dice)


def micro_iou(acc: ConfusionAccumulator, c: int) -> float:
    tp, fp, fn = int(acc.tp[c]), int(acc.fp[c]), int(acc.fn[c])
    den = tp + fp + fn
    return tp / den if den else math.nan


def micro_dice(acc: ConfusionAccumulator, c: int) -> float:
    tp, fp, fn = int(acc.tp[c]), int(acc.fp[c]), int(acc.fn[c])
    den = 2 * tp + fp + fn
    return 2 * tp / den if den else math.nan


def _nanmean(values) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return sum(vals) / len(vals) if vals else math.nan


def _pct(x: float) -> str:
    return "nan" if math.isnan(x) else f"{100 * x:.2f}"


@dataclass
class MetricReport:
    class_names: List[str]
    per_class_iou: List[float]
    per_class_dice: List[float]
    folds: List["MetricReport"] = field(default_factory=list)
    # set only on summaries: population std over folds
    std_iou: Optional[float] = None
    std_dice: Optional[float] = None
    mean_iou_override: Optional[float] = None
    mean_dice_override: Optional[float] = None

    @property
    def mean_iou(self) -> float:
        if self.mean_iou_override is not None:
            return self.mean_iou_override
        return _nanmean(self.per_class_iou)

    @property
    def mean_dice(self) -> float:
        if self.mean_dice_override is not None:
            return self.mean_dice_override
        return _nanmean(self.per_class_dice)

    def table_row(self, label: str = "model") -> str:
        """``label  µIoU ± std  µDice ± std`` in percent with two decimals."""
        si = 0.0 if self.std_iou is None else self.std_iou
        sd = 0.0 if self.std_dice is None else self.std_dice
        return f"{label}  {_pct(self.mean_iou)} ± {_pct(si)}  {_pct(self.mean_dice)} ± {_pct(sd)}"

    def to_text(self) -> str:
        lines = [f"format: acsseg-metrics", f"version: {REPORT_VERSION}",
                 f"num_classes: {len(self.class_names)}",
                 f"mean_iou: {self.mean_iou!r}", f"mean_dice: {self.mean_dice!r}"]
        if self.std_iou is not None:
            lines += [f"std_iou: {self.std_iou!r}", f"std_dice: {self.std_dice!r}",
                      f"num_folds: {len(self.folds)}"]
        for name, i, d in zip(self.class_names, self.per_class_iou, self.per_class_dice):
            lines += [f"iou.{name}: {i!r}", f"dice.{name}: {d!r}"]
        for k, f in enumerate(self.folds):
            lines += [f"fold{k}.mean_iou: {f.mean_iou!r}", f"fold{k}.mean_dice: {f.mean_dice!r}"]
        lines.append(f"table: {self.table_row()}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = [f"# acsseg-metrics-csv v{REPORT_VERSION}", "scope,class,iou,dice"]
        for name, i, d in zip(self.class_names, self.per_class_iou, self.per_class_dice):
            rows.append(f"all,{name},{i!r},{d!r}")
        rows.append(f"all,mean,{self.mean_iou!r},{self.mean_dice!r}")
        if self.std_iou is not None:
            rows.append(f"all,std,{self.std_iou!r},{self.std_dice!r}")
        for k, f in enumerate(self.folds):
            for name, i, d in zip(f.class_names, f.per_class_iou, f.per_class_dice):
                rows.append(f"fold{k},{name},{i!r},{d!r}")
            rows.append(f"fold{k},mean,{f.mean_iou!r},{f.mean_dice!r}")
        return "\n".join(rows) + "\n"


def parse_report_text(text: str) -> dict:
    """Read a ``to_text`` document back into a flat ``{key: value}`` dict (floats where possible)."""
    out = {}
    for line in text.splitlines():
        if not line.strip() or ":" not in line:
            continue
        key, val = line.split(":", 1)
        val = val.strip()
        try:
            out[key.strip()] = float(val)
        except ValueError:
            out[key.strip()] = val
    return out


def _mean_std(values):
    # shifted by the first fold so identical folds give exactly (x, 0)
    vals = np.asarray(values, dtype=np.float64)
    dev = vals - vals[0]
    return float(vals[0] + dev.mean()), float(dev.std(ddof=0))


def summarize(reports: Sequence[MetricReport]) -> MetricReport:
    """Combine per-fold reports: fold mean and population standard deviation."""
    reports = list(reports)
    if not reports:
        raise ValueError("summarize needs at least one fold report")
    names = reports[0].class_names
    for r in reports[1:]:
        if r.class_names != names:
            raise ValueError(f"class tables differ between folds: {names} vs {r.class_names}")
    iou_m, iou_s = _mean_std([r.mean_iou for r in reports])
    dice_m, dice_s = _mean_std([r.mean_dice for r in reports])
    per_iou = [_mean_std([r.per_class_iou[c] for r in reports])[0] for c in range(len(names))]
    per_dice = [_mean_std([r.per_class_dice[c] for r in reports])[0] for c in range(len(names))]
    return MetricReport(list(names), per_iou, per_dice, folds=reports, std_iou=iou_s,
                        std_dice=dice_s, mean_iou_override=iou_m, mean_dice_override=dice_m)
