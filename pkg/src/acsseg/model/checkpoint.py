"""Flat name -> array checkpoint archive.

An uncompressed zip whose members are ``<name>.npy`` files (little-endian
float32/float64/int64) plus a ``__metadata__.json`` member. Member
timestamps are pinned, so saving the same state twice gives identical bytes.
Optimizer moments live under ``__optim__/``-prefixed names.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import torch

from ..errors import CheckpointError

FORMAT = "acsseg-checkpoint"
VERSION = 1
METADATA = "__metadata__.json"
OPTIM_PREFIX = "__optim__/"
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _le(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=a.dtype.newbyteorder("<"), order="C")


def save_arrays(path, arrays: Dict[str, np.ndarray], metadata: dict):
    path = Path(path)
    meta = dict(metadata, format=FORMAT, version=VERSION)
    tmp = path.with_name(path.name + ".part")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            if name == METADATA or name.startswith("__metadata"):
                raise CheckpointError(f"reserved array name {name!r}")
            buf = io.BytesIO()
            np.lib.format.write_array(buf, _le(np.asarray(arrays[name])), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_EPOCH), buf.getvalue())
        zf.writestr(zipfile.ZipInfo(METADATA, date_time=_EPOCH),
                    json.dumps(meta, sort_keys=True, indent=1))
    tmp.replace(path)
    return path


def load_arrays(path):
    """Return ``(arrays, metadata)``."""
    try:
        with zipfile.ZipFile(path) as zf:
            names = zf.namelist()
            meta = json.loads(zf.read(METADATA)) if METADATA in names else {}
            arrays = {}
            for n in names:
                if n == METADATA:
                    continue
                if not n.endswith(".npy"):
                    raise CheckpointError(f"{path}: unexpected member {n!r}")
                arrays[n[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(n)), allow_pickle=False)
    except (OSError, zipfile.BadZipFile, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta and meta.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not an {FORMAT} archive")
    return arrays, meta


def state_arrays(model: torch.nn.Module) -> Dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}


def save_checkpoint(path, model, metadata: Optional[dict] = None, optimizer=None):
    arrays = state_arrays(model)
    if optimizer is not None:
        arrays.update(optimizer_arrays(model, optimizer))
    meta = dict(metadata or {})
    if hasattr(model, "config"):
        meta.setdefault("model_config", model.config.to_dict())
    meta.setdefault("dtype", str(next(model.parameters()).dtype).replace("torch.", ""))
    return save_arrays(path, arrays, meta)


def optimizer_arrays(model, optimizer) -> Dict[str, np.ndarray]:
    out = {}
    names = {id(p): n for n, p in model.named_parameters()}
    for group in optimizer.param_groups:
        for p in group["params"]:
            st = optimizer.state.get(p)
            if not st:
                continue
            n = names[id(p)]
            for key, val in st.items():
                arr = val.detach().cpu().numpy() if torch.is_tensor(val) else np.asarray(val)
                out[f"{OPTIM_PREFIX}{key}/{n}"] = arr
    return out


def restore_optimizer(model, optimizer, arrays: Dict[str, np.ndarray]):
    params = dict(model.named_parameters())
    state: Dict[str, dict] = {}
    for k, v in arrays.items():
        if not k.startswith(OPTIM_PREFIX):
            continue
        key, name = k[len(OPTIM_PREFIX):].split("/", 1)
        state.setdefault(name, {})[key] = torch.from_numpy(np.array(v))
    for name, st in state.items():
        p = params[name]
        optimizer.state[p] = {k: (v.to(p.dtype) if k != "step" else v.to(torch.float32))
                              for k, v in st.items()}


@dataclass
class ImportReport:
    loaded: List[str] = field(default_factory=list)
    skipped: List[str] = field(default_factory=list)
    mismatched: List[str] = field(default_factory=list)
    missing: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.skipped or self.mismatched or self.missing)

    def summary(self) -> str:
        return (f"loaded={len(self.loaded)} skipped={len(self.skipped)} "
                f"mismatched={len(self.mismatched)} missing={len(self.missing)}")


def weight_import(path_or_arrays, model: torch.nn.Module, strict: bool = False) -> ImportReport:
    """Copy every name-and-shape-matching tensor from a checkpoint into ``model``.

    Keys absent from the model are reported as ``skipped``; keys with the wrong
    shape as ``mismatched``; model tensors the file does not provide as
    ``missing``. In strict mode any of these raises before anything is copied.
    """
    if isinstance(path_or_arrays, dict):
        arrays = path_or_arrays
    else:
        arrays, _ = load_arrays(path_or_arrays)
    target = model.state_dict()
    report = ImportReport()
    for name in sorted(arrays):
        if name.startswith("__"):
            continue
        if name not in target:
            report.skipped.append(name)
        elif tuple(arrays[name].shape) != tuple(target[name].shape):
            report.mismatched.append(name)
        else:
            report.loaded.append(name)
    provided = {n for n in arrays if not n.startswith("__")}
    report.missing = sorted(n for n in target if n not in provided)
    if strict and not report.ok:
        bad = report.mismatched + report.skipped + report.missing
        raise CheckpointError(f"strict import failed ({report.summary()}): " + ", ".join(bad))
    with torch.no_grad():
        for name in report.loaded:
            t = target[name]
            t.copy_(torch.from_numpy(np.array(arrays[name])).to(t.dtype))
    return report


def load_checkpoint(path, model=None, strict=True):
    """Rebuild (or fill) a model from a checkpoint; returns ``(model, metadata, arrays)``."""
    from .config import ModelConfig
    from .network import ACSSegNet

    arrays, meta = load_arrays(path)
    if model is None:
        if "model_config" not in meta:
            raise CheckpointError(f"{path}: no model_config in metadata")
        model = ACSSegNet(ModelConfig.from_dict(meta["model_config"]))
        dtype = getattr(torch, meta.get("dtype", "float32"))
        model = model.to(dtype)
    weight_import(arrays, model, strict=strict)
    return model, meta, arrays
