"""Run configuration file: one JSON document holding every hyperparameter."""

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .features import DEFAULT_PARAMS
from .selftrain import SelfTrainConfig


class ConfigError(ValueError):
    pass


_TRAIN_KEYS = {f.name for f in fields(SelfTrainConfig)}
_RUN_KEYS = {"labeled_manifest", "unlabeled_manifest", "output_dir", "cache_dir", "dsp",
             "segment_seconds"}
REQUIRED = ("labeled_manifest", "output_dir")


@dataclass
class RunConfigFile:
    labeled_manifest: Path
    output_dir: Path
    train: SelfTrainConfig
    unlabeled_manifest: Optional[Path] = None
    cache_dir: Optional[Path] = None
    dsp: dict = field(default_factory=dict)
    segment_seconds: float = 3.5
    source: Optional[Path] = None

    @property
    def mfcc_params(self):
        return DEFAULT_PARAMS.with_overrides(self.dsp)

    def to_dict(self):
        return {
            "labeled_manifest": str(self.labeled_manifest),
            "unlabeled_manifest": None if self.unlabeled_manifest is None
            else str(self.unlabeled_manifest),
            "output_dir": str(self.output_dir),
            "cache_dir": None if self.cache_dir is None else str(self.cache_dir),
            "dsp": self.mfcc_params.to_dict(),
            "segment_seconds": self.segment_seconds,
        }


def parse_override(text):
    """``key=value`` with a JSON value; bare words stay strings."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def build_config(doc, base_dir=None, overrides=()):
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc = dict(doc)
    for item in overrides:
        key, value = parse_override(item)
        doc[key] = value
    unknown = sorted(set(doc) - _TRAIN_KEYS - _RUN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    missing = [k for k in REQUIRED if doc.get(k) is None]
    if missing:
        raise ConfigError(f"missing required config key(s): {', '.join(missing)}")

    def path(key):
        v = doc.get(key)
        if v is None:
            return None
        p = Path(v)
        p = p if p.is_absolute() or base_dir is None else Path(base_dir) / p
        return Path(os.path.normpath(p))

    try:
        train = SelfTrainConfig(**{k: doc[k] for k in _TRAIN_KEYS if k in doc})
        dsp = dict(doc.get("dsp") or {})
        DEFAULT_PARAMS.with_overrides(dsp)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc).strip("'\"")) from None
    return RunConfigFile(labeled_manifest=path("labeled_manifest"),
                         output_dir=path("output_dir"), train=train,
                         unlabeled_manifest=path("unlabeled_manifest"),
                         cache_dir=path("cache_dir"), dsp=dsp,
                         segment_seconds=float(doc.get("segment_seconds", 3.5)))


def load_config(path, overrides=()):
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
    cfg = build_config(doc, base_dir=path.parent, overrides=overrides)
    cfg.source = path
    return cfg
