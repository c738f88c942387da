"""Central-difference gradient checks for the network.

ReLU and max-type ops are piecewise smooth. With a step of 1e-3 a probe often
moves some pre-activation across zero (or swaps a max winner), and the plain
central difference then measures a different smooth piece than the one the
analytic gradient describes. :class:`BranchPin` records which branch every
non-smooth op took at the base point and replays it during the perturbed
evaluations, so the difference quotient stays on the base point's piece.
Both the pinned and the raw quotient are reported, along with whether a kink
was crossed.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .model.cbam import ChannelMax

# One regex per parameter family of the network.
BLOCK_FAMILIES: Dict[str, str] = {
    "stem_conv": r"^cnn_encoder\.stem\.0\.weight$",
    "residual_block": r"^cnn_encoder\.stages\.\d+\.\d+\.(conv1|conv2|shortcut\.0)\.weight$",
    "patch_embed": r"^vit_encoder\.stages\.\d+\.patch_embed\.proj\.weight$",
    "attention_projection": r"^vit_encoder\.stages\.\d+\.blocks\.\d+\.attn\.(q|kv|proj|sr)\.weight$",
    "mixffn_dwconv": r"^vit_encoder\.stages\.\d+\.blocks\.\d+\.ffn\.dwconv\.weight$",
    "cbam_mlp": r"^fusion\.\d+\.cbam\.channel\.mlp\.\d+\.weight$",
    "cbam_spatial_conv": r"^fusion\.\d+\.cbam\.spatial\.conv\.weight$",
    "decoder_conv": r"^decoder\.stages\.\d+\.conv[12]\.0\.weight$",
    "head": r"^head\.weight$",
}


class BranchPin:
    """Forward hooks that record, then replay, the branch of every non-smooth op."""

    def __init__(self, model: nn.Module):
        self.model = model
        self.mode = "off"
        self.branches: List[torch.Tensor] = []
        self.cursor = 0
        self.crossed = False
        self.handles = []

    def __enter__(self):
        for m in self.model.modules():
            if isinstance(m, (nn.ReLU, nn.MaxPool2d, nn.AdaptiveMaxPool2d, ChannelMax)):
                self.handles.append(m.register_forward_hook(self._hook))
        return self

    def __exit__(self, *exc):
        for h in self.handles:
            h.remove()
        self.handles.clear()

    def record(self):
        self.mode, self.branches = "record", []

    def replay(self):
        self.mode, self.cursor, self.crossed = "replay", 0, False

    @staticmethod
    def _branch(m, x):
        if isinstance(m, nn.ReLU):
            return x > 0
        if isinstance(m, nn.MaxPool2d):
            return F.max_pool2d(x, m.kernel_size, m.stride, m.padding, m.dilation,
                                ceil_mode=m.ceil_mode, return_indices=True)[1]
        if isinstance(m, nn.AdaptiveMaxPool2d):
            if m.output_size not in (1, (1, 1)):
                raise NotImplementedError("only global adaptive max pooling can be pinned")
            return x.flatten(2).argmax(-1, keepdim=True)
        return x.argmax(1, keepdim=True)  # ChannelMax

    @staticmethod
    def _apply(m, x, branch, out):
        if isinstance(m, nn.ReLU):
            return x * branch
        if isinstance(m, (nn.MaxPool2d, nn.AdaptiveMaxPool2d)):
            return x.flatten(2).gather(2, branch.flatten(2)).view(out.shape)
        return x.gather(1, branch)

    def _hook(self, m, inputs, out):
        x = inputs[0]
        if self.mode == "record":
            self.branches.append(self._branch(m, x))
        elif self.mode == "replay":
            base = self.branches[self.cursor]
            self.cursor += 1
            if not torch.equal(self._branch(m, x), base):
                self.crossed = True
            return self._apply(m, x, base, out)
        return None


@dataclass
class Probe:
    family: str
    name: str
    index: int
    analytic: float
    numeric: float
    raw_numeric: float
    kink_crossed: bool

    @property
    def rel_error(self) -> float:
        return relative_error(self.analytic, self.numeric)

    @property
    def raw_rel_error(self) -> float:
        return relative_error(self.analytic, self.raw_numeric)


def relative_error(a: float, b: float) -> float:
    den = max(abs(a), abs(b))
    return 0.0 if den == 0.0 else abs(a - b) / den


def check_parameters(model: nn.Module, loss_fn: Callable[[], torch.Tensor], probes, step: float = 1e-3,
                     families: Optional[Dict[str, str]] = None) -> List[Probe]:
    """Compare autograd against central differences for ``probes`` = [(name, flat_index), ...].

    ``loss_fn`` must recompute the scalar loss from the current parameters
    deterministically (no dropout, fixed inputs).
    """
    families = families or BLOCK_FAMILIES
    params = dict(model.named_parameters())
    out = []
    with BranchPin(model) as pin:
        pin.record()
        model.zero_grad(set_to_none=True)
        loss_fn().backward()
        pin.mode = "off"
        grads = {n: params[n].grad.detach().clone() for n, _ in probes}
        for name, idx in probes:
            p = params[name]
            flat = p.data.view(-1)
            orig = flat[idx].item()
            values = {}
            with torch.no_grad():
                for sign in (1, -1):
                    flat[idx] = orig + sign * step
                    pin.replay()
                    pinned = loss_fn().item()
                    crossed = pin.crossed
                    pin.mode = "off"
                    values[sign] = (pinned, loss_fn().item(), crossed)
                flat[idx] = orig
            numeric = (values[1][0] - values[-1][0]) / (2 * step)
            raw = (values[1][1] - values[-1][1]) / (2 * step)
            fam = next((f for f, pat in families.items() if re.match(pat, name)), "other")
            out.append(Probe(fam, name, idx, grads[name].view(-1)[idx].item(), numeric, raw,
                             values[1][2] or values[-1][2]))
    return out


def draw_probes(model: nn.Module, rng: np.random.Generator, per_family: int = 3,
                families: Optional[Dict[str, str]] = None):
    """Random (parameter name, flat index) pairs, ``per_family`` from every family."""
    families = families or BLOCK_FAMILIES
    params = dict(model.named_parameters())
    probes = []
    for fam, pat in families.items():
        names = [n for n in params if re.match(pat, n)]
        if not names:
            raise ValueError(f"no parameters match family {fam!r}")
        for _ in range(per_family):
            n = names[int(rng.integers(len(names)))]
            probes.append((n, int(rng.integers(params[n].numel()))))
    return probes
