"""Corpus manifests, audio normalization and web-collection helpers."""

import json
import math
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .audio import read_wav, resample

TARGET_RATE = 16000
MIN_SEGMENT_S = 1.0
N_FOLDS = 10
SOURCES = ("labeled", "unlabeled")


class ManifestError(ValueError):
    """Malformed manifest line."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ManifestValidationError(ManifestError):
    """Manifest parsed but violates an invariant."""


@dataclass(frozen=True)
class AudioClip:
    id: str
    samples: np.ndarray
    sample_rate_hz: int = TARGET_RATE
    source: str = "labeled"
    label: Optional[str] = None
    fold: Optional[int] = None

    @property
    def duration_s(self):
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: Path
    source: str
    label: Optional[str] = None
    fold: Optional[int] = None
    duration_s: Optional[float] = None

    def to_record(self, relative_to=None):
        path = self.path
        if relative_to is not None:
            try:
                path = path.relative_to(relative_to)
            except ValueError:
                pass
        rec = {"id": self.id, "path": str(path), "source": self.source}
        if self.label is not None:
            rec["label"] = self.label
            rec["fold"] = self.fold
        if self.duration_s is not None:
            rec["duration_s"] = self.duration_s
        return rec


@dataclass(frozen=True)
class Manifest:
    entries: tuple = field(default_factory=tuple)
    path: Optional[Path] = None

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def fold_counts(self):
        return dict(sorted(Counter(e.fold for e in self.entries if e.fold is not None).items()))

    def class_counts(self):
        return dict(sorted(Counter(e.label for e in self.entries if e.label is not None).items()))

    @property
    def labels(self):
        return sorted({e.label for e in self.entries if e.label is not None})


@dataclass(frozen=True)
class VideoMeta:
    id: str
    duration_s: float
    title: str = ""

    def __post_init__(self):
        if self.duration_s < 0:
            raise ValueError("duration_s must be nonnegative")


_ALLOWED_KEYS = {"id", "path", "label", "fold", "source", "duration_s"}


def _parse_entry(rec, lineno, base):
    if not isinstance(rec, dict):
        raise ManifestError("record is not an object", lineno)
    unknown = set(rec) - _ALLOWED_KEYS
    if unknown:
        raise ManifestError(f"unknown keys {sorted(unknown)}", lineno)
    for key in ("id", "path", "source"):
        if key not in rec:
            raise ManifestError(f"missing key '{key}'", lineno)
    source = rec["source"]
    if source not in SOURCES:
        raise ManifestValidationError(f"source must be one of {SOURCES}, got {source!r}", lineno)
    label, fold = rec.get("label"), rec.get("fold")
    if source == "labeled":
        if label is None or fold is None:
            raise ManifestValidationError(
                f"labeled entry {rec['id']!r} needs both label and fold", lineno)
        if isinstance(fold, bool) or not isinstance(fold, int):
            raise ManifestValidationError(f"fold must be an integer, got {fold!r}", lineno)
        if not 1 <= fold <= N_FOLDS:
            raise ManifestValidationError(f"fold {fold} outside 1..{N_FOLDS}", lineno)
    elif label is not None or fold is not None:
        raise ManifestValidationError(
            f"unlabeled entry {rec['id']!r} must not carry label or fold", lineno)
    path = Path(rec["path"])
    if not path.is_absolute() and base is not None:
        path = base / path
    duration = rec.get("duration_s")
    return ManifestEntry(id=str(rec["id"]), path=path, source=source, label=label,
                         fold=fold, duration_s=None if duration is None else float(duration))


def parse_manifest_lines(lines, base=None):
    entries = []
    seen = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"malformed record: {exc.msg}", lineno) from None
        entry = _parse_entry(rec, lineno, base)
        if entry.id in seen:
            raise ManifestValidationError(
                f"duplicate id {entry.id!r} (first seen on line {seen[entry.id]})", lineno)
        seen[entry.id] = lineno
        entries.append(entry)
    return entries


def load_manifest(path):
    """Load and validate a newline-delimited JSON manifest.

    Relative ``path`` values resolve against the manifest's directory.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        entries = parse_manifest_lines(fh, base=path.parent)
    return Manifest(entries=tuple(entries), path=path)


def write_manifest(path, entries):
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_record(relative_to=path.parent), sort_keys=True) + "\n")


def decode_and_normalize(path, id=None, source="labeled", label=None, fold=None):
    """Decode a PCM WAV file to a 16 kHz mono clip in [-1, 1]."""
    path = Path(path)
    x, rate = read_wav(path)
    mono = x.mean(axis=1) if x.shape[1] > 1 else x[:, 0].copy()
    if rate != TARGET_RATE:
        mono = resample(mono, rate, TARGET_RATE)
        np.clip(mono, -1.0, 1.0, out=mono)
    if not np.any(mono):
        warnings.warn(f"{path.name}: degenerate (all-zero) signal after normalization",
                      RuntimeWarning, stacklevel=2)
    return AudioClip(id=id if id is not None else path.stem, samples=mono,
                     sample_rate_hz=TARGET_RATE, source=source, label=label, fold=fold)


def load_clip(entry):
    return decode_and_normalize(entry.path, id=entry.id, source=entry.source,
                                label=entry.label, fold=entry.fold)


def segment_clip(clip, seg_len_s=3.5, min_len_s=MIN_SEGMENT_S):
    """Cut a clip into consecutive non-overlapping pieces of ``seg_len_s``.

    A trailing remainder survives only if it is at least ``min_len_s`` long.
    """
    if seg_len_s <= 0:
        raise ValueError("seg_len_s must be positive")
    rate = clip.sample_rate_hz
    seg = int(round(seg_len_s * rate))
    min_n = int(round(min_len_s * rate))
    n = len(clip.samples)
    out = []
    for k, start in enumerate(range(0, n, seg)):
        piece = clip.samples[start:start + seg]
        if len(piece) < seg and len(piece) < min_n:
            break
        out.append(AudioClip(id=f"{clip.id}#{k}", samples=piece, sample_rate_hz=rate,
                             source=clip.source, label=clip.label, fold=clip.fold))
    return out


def formulate_query(label):
    """Search query for a class: ``"<label> sound"``."""
    words = re.split(r"[_\s]+", label.strip())
    words = [w for w in words if w]
    if not words:
        raise ValueError("label must be nonempty")
    return " ".join(words + ["sound"])


def duration_filter(meta):
    # open interval: strictly longer than 5 s, strictly shorter than 10 min
    return 5.0 < meta.duration_s < 600.0 and not math.isnan(meta.duration_s)
