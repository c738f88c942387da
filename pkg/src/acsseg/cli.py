"""Command-line entry point: ``acsseg {folds,train,eval,predict,params,verify}``.

Exit codes: 0 success, 1 verification failure, 2 configuration/usage error,
3 data error, 4 numeric failure, 5 checkpoint I/O error.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch
import torch.nn.functional as F

from . import runconfig
from .data import DatasetManifest, build_manifest, fold_iterator, load_sample
from .data.io import overlay, read_image, save_mask, save_rgb
from .errors import ACSSegError, ConfigError, DataError
from .metrics import ConfusionAccumulator, MetricReport, summarize
from .model import ACSSegNet, ModelConfig, param_report
from .model.checkpoint import load_checkpoint
from .training import evaluate, fit, load_samples
from .verify import FAULTS, run_checks

VARIANTS = {"acs": "attention", "cs": "concat_only"}
EXIT_OK, EXIT_VERIFY = 0, 1


def _unique_dir(parent: Path, name: str) -> Path:
    path, k = parent / name, 1
    while path.exists():
        path, k = parent / f"{name}-{k}", k + 1
    path.mkdir(parents=True)
    return path


def cmd_folds(args) -> int:
    root = Path(args.root)
    if not root.exists():
        raise DataError(f"dataset root does not exist: {root}")
    size = tuple(args.target_size) if args.target_size else None
    manifest = build_manifest(root, args.kind, args.seed, size)
    out = Path(args.out) if args.out else root / "manifest.txt"
    manifest.write(out)
    sizes = manifest.fold_sizes()
    print(f"wrote {out}: {len(manifest.records)} records, classes {manifest.class_names}")
    for k, n in enumerate(sizes):
        print(f"fold {k}: {n}")
    return EXIT_OK


def _train_config(args, manifest: DatasetManifest):
    overrides: List[str] = []
    if args.variant:
        overrides.append(f"model.fusion_mode={VARIANTS[args.variant]}")
    if args.scale:
        overrides.append(f"model.scale={args.scale}")
    if args.epochs is not None:
        overrides.append(f"train.epochs={args.epochs}")
    if args.seed is not None:
        overrides += [f"train.seed={args.seed}", f"augment.seed={args.seed}"]
    overrides += list(args.set or [])
    defaults = {"model.num_classes": manifest.num_classes,
                "data.manifest": str(args.manifest), "data.fold": args.fold}
    return runconfig.load(args.config, overrides, defaults)


def cmd_train(args) -> int:
    manifest = DatasetManifest.read(args.manifest)
    cfg = _train_config(args, manifest)
    fold = int(cfg.data["fold"])
    variant = "acs" if cfg.model.fusion_mode == "attention" else "cs"
    stamp = time.strftime("%Y%m%d-%H%M%S")
    run_dir = _unique_dir(Path(args.out), f"{stamp}-seed{cfg.train.seed}-fold{fold}-{variant}")
    cfg.dump(run_dir / "config.yaml")
    t0 = time.time()
    result = fit(manifest, fold, cfg.model, cfg.train, run_dir, cfg.augment)
    last = result.reports[-1]
    print(f"run directory: {run_dir}")
    print(f"best checkpoint: {result.best_checkpoint}")
    print(f"last checkpoint: {result.last_checkpoint}")
    print(f"final validation: {last.table_row(variant.upper() + '-SegNet')}")
    print(f"elapsed: {time.time() - t0:.1f}s")
    return EXIT_OK


def _eval_fold(manifest, fold, checkpoint, oracle, batch_size) -> MetricReport:
    records = list(fold_iterator(manifest, fold, "val"))
    if oracle:
        acc = ConfusionAccumulator(manifest.num_classes)
        for r in records:
            s = load_sample(r, manifest.target_size, manifest)
            acc.accumulate(s.mask, s.mask)
        return acc.report(manifest.class_names)
    model, meta, _ = load_checkpoint(checkpoint)
    names = meta.get("class_names")
    if names is not None and list(names) != manifest.class_names:
        raise DataError(f"class table mismatch: checkpoint {names} vs manifest {manifest.class_names}")
    if model.config.num_classes != manifest.num_classes:
        raise DataError(f"checkpoint predicts {model.config.num_classes} classes, manifest has "
                        f"{manifest.num_classes}")
    return evaluate(model, load_samples(manifest, records), manifest.class_names, batch_size)


def cmd_eval(args) -> int:
    manifest = DatasetManifest.read(args.manifest)
    folds = [0, 1, 2] if args.all_folds else [args.fold]
    ckpts = list(args.checkpoint or [])
    if not args.oracle:
        if not ckpts:
            raise ConfigError("eval needs --checkpoint (or --oracle)")
        if len(ckpts) == 1:
            ckpts = ckpts * len(folds)
        if len(ckpts) != len(folds):
            raise ConfigError(f"got {len(ckpts)} checkpoints for {len(folds)} folds")
    else:
        ckpts = [None] * len(folds)
    reports = []
    for fold, ck in zip(folds, ckpts):
        rep = _eval_fold(manifest, fold, ck, args.oracle, args.batch_size)
        reports.append(rep)
        print(rep.table_row(f"fold {fold}"))
    final = summarize(reports) if args.all_folds else reports[0]
    if args.all_folds:
        print(final.table_row("mean ± std"))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(final.to_text(), encoding="utf-8")
        (out / "report.csv").write_text(final.to_csv(), encoding="utf-8")
        print(f"wrote {out / 'report.txt'} and {out / 'report.csv'}")
    return EXIT_OK


def _iter_images(inputs):
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            yield from sorted(q for q in p.iterdir() if q.suffix.lower() in (".png", ".jpg", ".jpeg", ".tif", ".tiff"))
        elif p.exists():
            yield p
        else:
            raise DataError(f"input not found: {p}")


@torch.no_grad()
def predict_image(model: ACSSegNet, rgb: np.ndarray) -> np.ndarray:
    """Label map for an (H, W, 3) uint8 image; pads to a multiple of 32 and crops back."""
    h, w = rgb.shape[:2]
    dtype = next(model.parameters()).dtype
    x = torch.from_numpy(rgb.transpose(2, 0, 1).astype(np.float32) / 255.0)[None].to(dtype)
    ph, pw = (-h) % 32, (-w) % 32
    if ph or pw:
        mode = "reflect" if ph < h and pw < w else "replicate"
        x = F.pad(x, (0, pw, 0, ph), mode=mode)
    model.eval()
    return model(x).argmax(dim=1)[0, :h, :w].cpu().numpy().astype(np.uint8)


def cmd_predict(args) -> int:
    model, meta, _ = load_checkpoint(args.checkpoint)
    names = meta.get("class_names") or [f"class{i}" for i in range(model.config.num_classes)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for path in _iter_images(args.inputs):
        rgb = np.asarray(read_image(path))
        mask = predict_image(model, rgb)
        save_mask(out / f"{path.stem}_mask.png", mask)
        if args.overlay:
            save_rgb(out / f"{path.stem}_overlay.png", overlay(rgb, mask, names, args.alpha))
        n += 1
    print(f"wrote {n} mask(s) to {out}")
    return EXIT_OK


def cmd_params(args) -> int:
    cfg = ModelConfig.from_scale(args.scale, num_classes=args.num_classes,
                                 fusion_mode=VARIANTS[args.variant])
    report = param_report(ACSSegNet(cfg))
    for k, v in report.items():
        print(f"{k:12s} {v:>12,d}")
    return EXIT_OK


def cmd_verify(args) -> int:
    only = [c for item in (args.only or []) for c in item.split(",") if c]
    results = run_checks(only or None, args.fault)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="acsseg", description="ACS-SegNet dual-encoder segmentation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("folds", help="build a dataset manifest with 3-fold assignment")
    f.add_argument("--root", required=True)
    f.add_argument("--kind", choices=["binary", "multiclass"], default="binary")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--target-size", type=int, nargs=2, metavar=("H", "W"))
    f.add_argument("--out", help="manifest path (default: <root>/manifest.txt)")
    f.set_defaults(func=cmd_folds)

    t = sub.add_parser("train", help="train one fold")
    t.add_argument("--manifest", required=True)
    t.add_argument("--fold", type=int, default=0)
    t.add_argument("--variant", choices=sorted(VARIANTS))
    t.add_argument("--scale", choices=["full", "tiny"])
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--config", help="YAML run config")
    t.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    t.add_argument("--out", default="runs")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="micro IoU/Dice on validation folds")
    e.add_argument("--manifest", required=True)
    e.add_argument("--checkpoint", action="append", help="one per fold, or one for all")
    g = e.add_mutually_exclusive_group()
    g.add_argument("--fold", type=int, default=0)
    g.add_argument("--all-folds", action="store_true")
    e.add_argument("--oracle", action="store_true", help="score ground truth against itself")
    e.add_argument("--batch-size", type=int, default=4)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="write label masks (and overlays) for images")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--overlay", action="store_true")
    pr.add_argument("--alpha", type=float, default=0.5)
    pr.add_argument("inputs", nargs="+")
    pr.set_defaults(func=cmd_predict)

    pa = sub.add_parser("params", help="parameter counts per block")
    pa.add_argument("--scale", choices=["full", "tiny"], default="full")
    pa.add_argument("--variant", choices=sorted(VARIANTS), default="acs")
    pa.add_argument("--num-classes", type=int, default=2)
    pa.set_defaults(func=cmd_params)

    v = sub.add_parser("verify", help="run the invariant battery")
    v.add_argument("--only", action="append", help="comma-separated subset of shape,cbam,grad,metrics,params")
    v.add_argument("--fault", choices=sorted(FAULTS), help="inject a known wiring fault (negative control)")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ACSSegError as exc:
        problems = getattr(exc, "problems", None) or [str(exc)]
        for line in problems:
            print(f"error: {line}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
