"""Desk-scale training: CE + soft-Dice loss, AdamW with cosine decay, fold-wise fit."""
from __future__ import annotations

import dataclasses
import json
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .data import AugmentConfig, DatasetManifest, augment, fold_iterator, load_sample, sample_rng
from .data.io import Sample
from .errors import ConfigError, NumericError
from .metrics import ConfusionAccumulator, MetricReport, predict_labels
from .model import ACSSegNet, ModelConfig, save_checkpoint
from .model.checkpoint import load_checkpoint, restore_optimizer

PRECISIONS = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    learning_rate: float = 1e-4
    weight_decay: float = 1e-2
    grad_clip_norm: float = 1.0  # 0 disables clipping
    ce_weight: float = 1.0
    dice_weight: float = 1.0
    seed: int = 0
    eval_every: int = 1
    precision: str = "float32"
    augment: bool = True

    def __post_init__(self):
        p = []
        if self.epochs < 0:
            p.append("epochs must be >= 0")
        if self.batch_size < 1:
            p.append("batch_size must be >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0 or self.grad_clip_norm < 0:
            p.append("learning_rate, weight_decay and grad_clip_norm must be >= 0")
        if self.ce_weight < 0 or self.dice_weight < 0 or self.ce_weight + self.dice_weight == 0:
            p.append("loss weights must be >= 0 and not both 0")
        if self.eval_every < 1:
            p.append("eval_every must be >= 1")
        if self.precision not in PRECISIONS:
            p.append(f"precision must be one of {sorted(PRECISIONS)}")
        if p:
            raise ConfigError(p)

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


@dataclass
class LossTerms:
    total: torch.Tensor
    ce: torch.Tensor
    dice: torch.Tensor


def seg_loss(logits, target, ce_weight=1.0, dice_weight=1.0, eps=1e-6) -> LossTerms:
    """``ce_weight * mean pixel CE + dice_weight * (1 - mean soft Dice over classes)``.

    Soft Dice is computed per class over the whole batch.
    """
    if logits.ndim != 4 or target.shape != (logits.shape[0],) + tuple(logits.shape[2:]):
        raise ValueError(f"logits {tuple(logits.shape)} and target {tuple(target.shape)} disagree")
    k = logits.shape[1]
    target = target.long()
    if target.numel() and (target.min() < 0 or target.max() >= k):
        raise ValueError(f"target labels outside [0, {k})")
    ce = F.cross_entropy(logits, target)
    probs = torch.softmax(logits, dim=1)
    onehot = F.one_hot(target, k).permute(0, 3, 1, 2).to(probs.dtype)
    dims = (0, 2, 3)
    inter = (probs * onehot).sum(dims)
    denom = probs.sum(dims) + onehot.sum(dims)
    dice = 1.0 - ((2 * inter + eps) / (denom + eps)).mean()
    return LossTerms(ce_weight * ce + dice_weight * dice, ce, dice)


@dataclass
class TrainState:
    model: ACSSegNet
    optimizer: torch.optim.Optimizer
    scheduler: Optional[torch.optim.lr_scheduler.LRScheduler] = None
    step: int = 0
    epoch: int = 0
    seed: int = 0
    best_metric: float = -math.inf
    best_path: Optional[str] = None

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]


def make_optimizer(model, cfg: TrainConfig, total_steps: int):
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    total = max(total_steps, 1)
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda s: 0.5 * (1.0 + math.cos(math.pi * min(s, total) / total)))
    return opt, sched


def init_state(model_config: ModelConfig, train_config: TrainConfig, total_steps: int) -> TrainState:
    torch.manual_seed(train_config.seed)
    model = ACSSegNet(model_config).to(train_config.dtype)
    opt, sched = make_optimizer(model, train_config, total_steps)
    return TrainState(model, opt, sched, seed=train_config.seed)


def _first_nonfinite(named) -> Optional[str]:
    for name, t in named:
        if t is not None and not torch.isfinite(t).all():
            return name
    return None


def train_step(state: TrainState, images, masks, cfg: TrainConfig) -> LossTerms:
    """One forward/backward/clip/AdamW update. Raises NumericError on a non-finite loss."""
    model = state.model
    model.train()
    state.optimizer.zero_grad(set_to_none=True)
    logits = model(images)
    terms = seg_loss(logits, masks, cfg.ce_weight, cfg.dice_weight)
    if not torch.isfinite(terms.total):
        culprit = (_first_nonfinite([("logits", logits)])
                   or _first_nonfinite(model.named_parameters())
                   or ("ce" if not torch.isfinite(terms.ce) else "dice"))
        raise NumericError(f"non-finite loss at step {state.step}; first non-finite tensor: {culprit}")
    terms.total.backward()
    bad = _first_nonfinite((n, p.grad) for n, p in model.named_parameters())
    if bad:
        raise NumericError(f"non-finite gradient at step {state.step} in {bad}")
    if cfg.grad_clip_norm > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip_norm)
    state.optimizer.step()
    if state.scheduler is not None:
        state.scheduler.step()
    state.step += 1
    return LossTerms(terms.total.detach(), terms.ce.detach(), terms.dice.detach())


def num_batches(n: int, batch_size: int, merge_singleton: bool = False) -> int:
    k = math.ceil(n / batch_size)
    return k - 1 if merge_singleton and k > 1 and n % batch_size == 1 else k


def batches(samples: Sequence[Sample], batch_size: int, dtype, merge_singleton: bool = False):
    """Stack samples into (images, masks) batches.

    With ``merge_singleton`` a trailing batch of one joins the previous batch,
    since BatchNorm cannot train on a single 1x1 bottleneck value.
    """
    starts = list(range(0, len(samples), batch_size))
    if merge_singleton and len(starts) > 1 and len(samples) - starts[-1] == 1:
        starts.pop()
    for i, start in enumerate(starts):
        end = starts[i + 1] if i + 1 < len(starts) else len(samples)
        chunk = samples[start:end]
        images = torch.from_numpy(np.stack([s.image for s in chunk])).to(dtype)
        masks = torch.from_numpy(np.stack([s.mask for s in chunk])).long()
        yield images, masks


@torch.no_grad()
def evaluate(model, samples: Sequence[Sample], class_names, batch_size: int = 4) -> MetricReport:
    model.eval()
    dtype = next(model.parameters()).dtype
    acc = ConfusionAccumulator(len(class_names))
    for images, masks in batches(samples, batch_size, dtype):
        acc.accumulate(predict_labels(model(images)), masks)
    return acc.report(class_names)


class RunLog:
    """Append-only JSON-lines log."""

    def __init__(self, path):
        self.path = Path(path)

    def write(self, **fields):
        fields.setdefault("time", time.strftime("%Y-%m-%dT%H:%M:%S"))
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(fields, sort_keys=True) + "\n")


@dataclass
class FitResult:
    run_dir: Path
    best_checkpoint: Path
    last_checkpoint: Path
    reports: List[MetricReport] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)
    state: Optional[TrainState] = None


def checkpoint_metadata(state: TrainState, manifest: DatasetManifest, train_config: TrainConfig,
                        fold_id: int, extra: Optional[dict] = None) -> dict:
    meta = {
        "step": state.step, "epoch": state.epoch, "seed": state.seed, "fold": fold_id,
        "class_names": manifest.class_names, "target_size": list(manifest.target_size),
        "train_config": dataclasses.asdict(train_config),
    }
    meta.update(extra or {})
    return meta


def load_samples(manifest: DatasetManifest, records) -> List[Sample]:
    return [load_sample(r, manifest.target_size, manifest) for r in records]


def fit(manifest: DatasetManifest, fold_id: int, model_config: ModelConfig, train_config: TrainConfig,
        run_dir, augment_config: Optional[AugmentConfig] = None) -> FitResult:
    """Train on the fold's train split, validate on its val split.

    Writes ``best.ckpt`` (highest mean µIoU), ``last.ckpt`` and ``train.log``
    into ``run_dir``. ``epochs == 0`` only evaluates the initial weights.
    """
    if model_config.num_classes != manifest.num_classes:
        raise ConfigError(f"model num_classes={model_config.num_classes} but manifest has "
                          f"{manifest.num_classes} classes")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    log = RunLog(run_dir / "train.log")
    aug_cfg = augment_config or AugmentConfig(seed=train_config.seed)
    train = load_samples(manifest, fold_iterator(manifest, fold_id, "train"))
    val = load_samples(manifest, fold_iterator(manifest, fold_id, "val"))
    steps_per_epoch = num_batches(len(train), train_config.batch_size, merge_singleton=True)
    state = init_state(model_config, train_config, steps_per_epoch * train_config.epochs)
    dtype = train_config.dtype
    best, last = run_dir / "best.ckpt", run_dir / "last.ckpt"
    result = FitResult(run_dir, best, last, state=state)

    def validate():
        report = evaluate(state.model, val, manifest.class_names, train_config.batch_size)
        result.reports.append(report)
        log.write(event="eval", epoch=state.epoch, step=state.step, mean_iou=report.mean_iou,
                  mean_dice=report.mean_dice)
        score = -math.inf if math.isnan(report.mean_iou) else report.mean_iou
        if score > state.best_metric or not best.exists():
            state.best_metric = score
            state.best_path = str(best)
            save_checkpoint(best, state.model, checkpoint_metadata(
                state, manifest, train_config, fold_id, {"mean_iou": report.mean_iou}))

    if train_config.epochs == 0:
        validate()
    for epoch in range(train_config.epochs):
        state.epoch = epoch
        order = np.random.default_rng([train_config.seed, epoch]).permutation(len(train))
        epoch_samples = []
        for i in order:
            s = train[int(i)]
            if train_config.augment:
                s = augment(s, aug_cfg, sample_rng(aug_cfg.seed, epoch, int(i)))
            epoch_samples.append(s)
        for images, masks in batches(epoch_samples, train_config.batch_size, dtype, merge_singleton=True):
            lr = state.lr
            terms = train_step(state, images, masks, train_config)
            loss = float(terms.total)
            result.losses.append(loss)
            log.write(event="step", step=state.step, epoch=epoch, loss=loss, ce=float(terms.ce),
                      dice=float(terms.dice), lr=lr)
        state.epoch = epoch + 1
        if (epoch + 1) % train_config.eval_every == 0 or epoch + 1 == train_config.epochs:
            validate()
    save_checkpoint(last, state.model, checkpoint_metadata(state, manifest, train_config, fold_id),
                    optimizer=state.optimizer)
    return result


def resume(path, train_config: TrainConfig, total_steps: int) -> TrainState:
    """Rebuild a TrainState (model + AdamW moments) from a checkpoint."""
    model, meta, arrays = load_checkpoint(path)
    opt, sched = make_optimizer(model, train_config, total_steps)
    restore_optimizer(model, opt, arrays)
    with warnings.catch_warnings():
        # fast-forwarding the schedule without optimizer steps is intended here
        warnings.simplefilter("ignore", UserWarning)
        for _ in range(meta.get("step", 0)):
            sched.step()
    return TrainState(model, opt, sched, step=meta.get("step", 0), epoch=meta.get("epoch", 0),
                      seed=meta.get("seed", 0))
