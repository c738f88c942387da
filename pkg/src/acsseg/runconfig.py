"""Merged run configuration: YAML file + ``section.key=value`` overrides.

Sections: ``model`` (ModelConfig; ``scale`` picks the preset the other keys
override), ``train`` (TrainConfig), ``augment`` (AugmentConfig) and ``data``
(``manifest``, ``fold``). Unknown keys are errors, and validation reports every
problem at once.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import yaml

from .data import AugmentConfig
from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig

DATA_KEYS = {"manifest": None, "fold": 0}
SECTIONS = ("model", "train", "augment", "data")


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    augment: AugmentConfig
    data: Dict[str, object] = field(default_factory=lambda: dict(DATA_KEYS))

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "train": dataclasses.asdict(self.train),
            "augment": {k: list(v) if isinstance(v, tuple) else v
                        for k, v in dataclasses.asdict(self.augment).items()},
            "data": {k: (str(v) if isinstance(v, Path) else v) for k, v in self.data.items()},
        }

    def dump(self, path) -> Path:
        path = Path(path)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=True), encoding="utf-8")
        return path


def parse_override(item: str):
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form section.key=value")
    key, raw = item.split("=", 1)
    if "." not in key:
        raise ConfigError(f"override key {key!r} must be section.key")
    section, name = key.split(".", 1)
    return section.strip(), name.strip(), yaml.safe_load(raw)


def _field_names(cls) -> set:
    return {f.name for f in dataclasses.fields(cls)}


def resolve(raw: Optional[dict] = None, overrides: Sequence[str] = (),
            defaults: Optional[Dict[str, object]] = None) -> RunConfig:
    """Build a validated RunConfig, collecting every problem before raising.

    Precedence: ``overrides`` > ``raw`` (file contents) > ``defaults`` > dataclass defaults.
    """
    raw = raw or {}
    problems: List[str] = [f"unknown section: {k}" for k in raw if k not in SECTIONS]
    raw = {s: dict(raw.get(s) or {}) for s in SECTIONS}
    for dotted, value in (defaults or {}).items():
        section, name = dotted.split(".", 1)
        raw[section].setdefault(name, value)
    for item in overrides:
        try:
            section, name, value = parse_override(item)
        except ConfigError as exc:
            problems += exc.problems
            continue
        if section not in SECTIONS:
            problems.append(f"unknown section in override {item!r}")
            continue
        raw[section][name] = value

    known = {"model": _field_names(ModelConfig), "train": _field_names(TrainConfig),
             "augment": _field_names(AugmentConfig), "data": set(DATA_KEYS)}
    for s in SECTIONS:
        problems += [f"unknown key: {s}.{k}" for k in sorted(set(raw[s]) - known[s])]

    def build(section, factory):
        kwargs = {k: v for k, v in raw[section].items() if k in known[section]}
        try:
            return factory(**kwargs)
        except ConfigError as exc:
            problems.extend(f"{section}: {p}" for p in exc.problems)
        except (TypeError, ValueError) as exc:
            problems.append(f"{section}: {exc}")
        return None

    def model_factory(scale="full", **kw):
        return ModelConfig.from_scale(scale, **kw)

    model = build("model", model_factory)
    train = build("train", TrainConfig)
    augment = build("augment", AugmentConfig)
    data = dict(DATA_KEYS)
    data.update({k: v for k, v in raw["data"].items() if k in DATA_KEYS})
    if problems:
        raise ConfigError(problems)
    return RunConfig(model, train, augment, data)


def load(path: Optional[str] = None, overrides: Sequence[str] = (),
         defaults: Optional[Dict[str, object]] = None) -> RunConfig:
    raw = {}
    if path:
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a mapping of sections")
    return resolve(raw, overrides, defaults)
