"""Built-in invariant battery behind ``acsseg verify``."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch

from .errors import ACSSegError
from .gradcheck import check_parameters, draw_probes
from .metrics import ConfusionAccumulator
from .model import ACSSegNet, ModelConfig, param_count
from .model.cbam import CBAM
from .training import seg_loss

LADDER_SIZES = (64, 96, 128, 256)
GRAD_TOL = 1e-3
GRAD_STEP = 1e-3


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def expected_ladder(cfg: ModelConfig, h: int, w: int) -> Dict[str, tuple]:
    """(channels, height, width) of every tagged feature map, from the config alone."""
    t = {}
    for i, c in enumerate(cfg.cnn_widths):
        s = 2 ** (i + 1)
        t[f"R{i}"] = (c, h // s, w // s)
    for i, c in enumerate(cfg.vit_widths):
        s = 2 ** (i + 2)
        t[f"S{i + 1}"] = (c, h // s, w // s)
    for i in range(4):
        s = 2 ** (i + 1)
        t[f"F{i + 1}"] = (cfg.vit_widths[i] + cfg.cnn_widths[i], h // s, w // s)
    for k, c in enumerate(cfg.decoder_widths):
        s = 2 ** (4 - k)
        t[f"D{k + 1}"] = (c, h // s, w // s)
    t["logits"] = (cfg.num_classes, h, w)
    return t


def observed_ladder(model: ACSSegNet, x) -> Dict[str, tuple]:
    tr = model.trace(x)
    t = {}
    for i, f in enumerate(tr.cnn):
        t[f"R{i}"] = f.shape[1:]
    for i, f in enumerate(tr.vit):
        t[f"S{i + 1}"] = f.shape[1:]
    for i, f in enumerate(tr.fused):
        t[f"F{i + 1}"] = f.shape[1:]
    for k, f in enumerate(tr.decoder):
        t[f"D{k + 1}"] = f.shape[1:]
    t["logits"] = tuple(tr.logits.shape[1:])
    return t


def random_tiny_config(rng: np.random.Generator, **overrides) -> ModelConfig:
    """A random valid small config (used for property checks)."""
    red = int(rng.choice([1, 2, 4]))
    heads = [int(rng.choice([1, 2])) for _ in range(4)]
    vit = [4 * h * int(rng.integers(1, 4)) for h in heads]
    cnn = [red * int(rng.integers(1, 5)) for _ in range(5)]
    cfg = dict(
        num_classes=int(rng.integers(2, 6)),
        cnn_widths=cnn, cnn_depths=[int(rng.integers(1, 3)) for _ in range(4)],
        vit_widths=vit, vit_depths=[int(rng.integers(1, 3)) for _ in range(4)],
        vit_heads=heads, vit_ffn_expansion=int(rng.integers(1, 5)),
        cbam_reduction=red, cbam_spatial_kernel=int(rng.choice([3, 5, 7])),
        decoder_widths=[int(rng.integers(2, 12)) for _ in range(5)],
        fusion_mode=str(rng.choice(["attention", "concat_only"])), scale="tiny")
    cfg.update(overrides)
    return ModelConfig(**cfg)


def check_shapes(n_random: int = 10, seed: int = 0, config_overrides: Optional[dict] = None,
                 sizes: Sequence[int] = LADDER_SIZES) -> CheckResult:
    rng = np.random.default_rng(seed)
    overrides = config_overrides or {}
    configs = [ModelConfig.from_scale("tiny", fusion_mode=m, **overrides)
               for m in ("attention", "concat_only")]
    configs += [random_tiny_config(rng, **overrides) for _ in range(n_random)]
    failures, runs = [], 0
    torch.manual_seed(seed)
    for ci, cfg in enumerate(configs):
        model = ACSSegNet(cfg).eval()
        for size in sizes:
            runs += 1
            x = torch.rand(1, cfg.input_channels, size, size)
            try:
                with torch.no_grad():
                    got = observed_ladder(model, x)
            except ACSSegError as exc:
                failures.append(f"config {ci} size {size}: {exc}")
                continue
            want = expected_ladder(cfg, size, size)
            bad = [k for k in want if got.get(k) != want[k]]
            if bad:
                failures.append(f"config {ci} size {size}: {bad[0]} is {got.get(bad[0])}, "
                                f"expected {want[bad[0]]}")
    detail = f"{runs - len(failures)}/{runs} (config, size) runs match the stride/channel table"
    if failures:
        detail += "; first failure: " + failures[0]
    return CheckResult("shape", not failures, detail)


def check_cbam(seed: int = 0, trials: int = 20) -> CheckResult:
    g = torch.Generator().manual_seed(seed)
    worst_gate_lo, worst_gate_hi, violations = 1.0, 0.0, 0
    for _ in range(trials):
        c = 4 * int(torch.randint(1, 9, (1,), generator=g))
        m = CBAM(c, reduction=4, kernel_size=7).double()
        for p in m.parameters():
            torch.nn.init.normal_(p, 0, 0.3, generator=g)
        f = torch.randn(2, c, 8, 8, generator=g, dtype=torch.float64)
        with torch.no_grad():
            cg = m.channel(f)
            sg = m.spatial(f * cg)
            out = m(f)
        worst_gate_lo = min(worst_gate_lo, float(cg.min()), float(sg.min()))
        worst_gate_hi = max(worst_gate_hi, float(cg.max()), float(sg.max()))
        violations += int((out.abs() > f.abs()).sum()) + int(out.shape != f.shape)
    ok = worst_gate_lo > 0.0 and worst_gate_hi < 1.0 and violations == 0
    return CheckResult("cbam", ok, f"gates in [{worst_gate_lo:.3g}, {worst_gate_hi:.3g}], "
                                   f"{violations} |out|>|in| or shape violations")


def check_gradients(seed: int = 0, per_family: int = 3, tol: float = GRAD_TOL,
                    step: float = GRAD_STEP) -> CheckResult:
    torch.manual_seed(seed)
    model = ACSSegNet(ModelConfig.from_scale("tiny", num_classes=3)).double().train()
    g = torch.Generator().manual_seed(seed + 1)
    x = torch.rand(2, 3, 64, 64, generator=g, dtype=torch.float64)
    y = torch.randint(0, 3, (2, 64, 64), generator=g)
    probes = draw_probes(model, np.random.default_rng(seed), per_family)
    res = check_parameters(model, lambda: seg_loss(model(x), y).total, probes, step=step)
    worst = max(res, key=lambda p: p.rel_error)
    ok = all(p.rel_error <= tol for p in res)
    fams = len({p.family for p in res})
    crossed = sum(p.kink_crossed for p in res)
    return CheckResult("grad", ok, f"{len(res)} probes over {fams} families, worst rel err "
                                   f"{worst.rel_error:.2e} ({worst.family}); {crossed} probes crossed a kink")


def brute_force_scores(preds, trues, k):
    """Per-class IoU/Dice on all masks concatenated into one image."""
    p = np.concatenate([np.ravel(a) for a in preds])
    t = np.concatenate([np.ravel(a) for a in trues])
    iou, dice = [], []
    for c in range(k):
        tp = int(np.sum((p == c) & (t == c)))
        fp = int(np.sum((p == c) & (t != c)))
        fn = int(np.sum((p != c) & (t == c)))
        iou.append(tp / (tp + fp + fn) if tp + fp + fn else float("nan"))
        dice.append(2 * tp / (2 * tp + fp + fn) if tp + fp + fn else float("nan"))
    return iou, dice


def check_metrics(seed: int = 0, trials: int = 200) -> CheckResult:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(trials):
        k = int(rng.integers(2, 7))
        n = int(rng.integers(1, 5))
        shapes = [tuple(rng.integers(1, 9, 2)) for _ in range(n)]
        preds = [rng.integers(0, k, s) for s in shapes]
        trues = [rng.integers(0, k, s) for s in shapes]
        acc = ConfusionAccumulator(k)
        for p, t in zip(preds, trues):
            acc.accumulate(p, t)
        iou, dice = brute_force_scores(preds, trues, k)
        for c in range(k):
            a, b = acc.iou(c), acc.dice(c)
            same = (a == iou[c] or (np.isnan(a) and np.isnan(iou[c]))) and \
                   (b == dice[c] or (np.isnan(b) and np.isnan(dice[c])))
            ident = np.isnan(a) or abs(b - 2 * a / (1 + a)) <= 1e-12
            bad += int(not (same and ident))
    return CheckResult("metrics", bad == 0, f"{trials} random mask sets, {bad} per-class mismatches")


def ledger_param_count(cfg: ModelConfig) -> Dict[str, int]:
    """Closed-form parameter count per top-level block."""
    def conv(cin, cout, k, bias=True, groups=1):
        return cin // groups * cout * k * k + (cout if bias else 0)

    bn = lambda c: 2 * c  # noqa: E731
    ln = bn
    lin = lambda a, b: a * b + b  # noqa: E731

    cnn = conv(cfg.input_channels, cfg.cnn_widths[0], 7, bias=False) + bn(cfg.cnn_widths[0])
    cin = cfg.cnn_widths[0]
    for i, (cout, depth) in enumerate(zip(cfg.cnn_widths[1:], cfg.cnn_depths)):
        for b in range(depth):
            src = cin if b == 0 else cout
            cnn += conv(src, cout, 3, False) + bn(cout) + conv(cout, cout, 3, False) + bn(cout)
            if b == 0 and (i > 0 or cin != cout):
                cnn += conv(src, cout, 1, False) + bn(cout)
        cin = cout

    vit, cin = 0, cfg.input_channels
    for i in range(4):
        d, k = cfg.vit_widths[i], (7 if i == 0 else 3)
        vit += conv(cin, d, k) + ln(d)
        hid = d * cfg.vit_ffn_expansion
        sr = cfg.vit_sr_ratios[i]
        block = ln(d) + lin(d, d) + lin(d, 2 * d) + lin(d, d) + ln(d)
        block += (conv(d, d, sr) + ln(d)) if sr > 1 else 0
        block += lin(d, hid) + conv(hid, hid, 3, groups=hid) + lin(hid, d)
        vit += cfg.vit_depths[i] * block + ln(d)
        cin = d

    fusion = 0
    if cfg.fusion_mode == "attention":
        for c in cfg.fused_widths:
            h = c // cfg.cbam_reduction
            fusion += conv(c, h, 1) + conv(h, c, 1) + conv(2, 1, cfg.cbam_spatial_kernel)

    dec, cin = 0, cfg.cnn_widths[4]
    skips = list(cfg.fused_widths[::-1]) + [0]
    for cout, skip in zip(cfg.decoder_widths, skips):
        dec += conv(cin + skip, cout, 3, False) + bn(cout) + conv(cout, cout, 3, False) + bn(cout)
        cin = cout
    head = conv(cfg.decoder_widths[-1], cfg.num_classes, 1)
    out = {"cnn_encoder": cnn, "vit_encoder": vit, "fusion": fusion, "decoder": dec, "head": head}
    out["total"] = sum(out.values())
    return out


def check_params(include_full: bool = True) -> CheckResult:
    notes, ok = [], True
    for cfg in [ModelConfig.from_scale("tiny"), ModelConfig.from_scale("tiny", fusion_mode="concat_only")]:
        got, want = param_count(ACSSegNet(cfg)), ledger_param_count(cfg)["total"]
        ok &= got == want
        notes.append(f"tiny/{cfg.fusion_mode}: {got} (ledger {want})")
    if include_full:
        acs = param_count(ACSSegNet(ModelConfig.from_scale("full")))
        cs = param_count(ACSSegNet(ModelConfig.from_scale("full", fusion_mode="concat_only")))
        cbam = ledger_param_count(ModelConfig.from_scale("full"))["fusion"]
        ok &= 45_000_000 <= acs <= 55_000_000 and acs - cs == cbam
        notes.append(f"full: ACS {acs:,}, CS {cs:,}, diff {acs - cs:,} (CBAM ledger {cbam:,})")
    return CheckResult("params", ok, "; ".join(notes))


CHECKS: Dict[str, Callable[..., CheckResult]] = {
    "shape": check_shapes,
    "cbam": check_cbam,
    "grad": check_gradients,
    "metrics": check_metrics,
    "params": check_params,
}

FAULTS = {
    # pairs each transformer stage with the CNN level at the *same* stride
    "wrong-stride": {"skip_pairing": (1, 2, 3, 4)},
}


def run_checks(only: Optional[Sequence[str]] = None, fault: Optional[str] = None) -> List[CheckResult]:
    names = list(only) if only else list(CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown checks {unknown}; choose from {list(CHECKS)}")
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; choose from {list(FAULTS)}")
    results = []
    for n in names:
        if n == "shape" and fault:
            results.append(check_shapes(config_overrides=FAULTS[fault]))
        else:
            results.append(CHECKS[n]())
    return results
