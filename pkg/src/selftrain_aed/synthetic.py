"""Synthetic labeled and web-like unlabeled corpora with hidden ground truth.

Every class exemplar sits over a quiet background and is sometimes
overlapped by a weaker sound of another class. Unlabeled exemplars then pass
through a mismatch channel (gain jitter, additive noise at a fixed SNR, optional
band limit) and a fraction are out-of-vocabulary distractors.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .audio import write_wav
from .ingest import N_FOLDS, AudioClip, ManifestEntry, write_manifest

GENERATORS = ("tone", "chirp", "noiseband", "impulse_train")
DISTRACTOR = "__distractor__"


@dataclass
class SynthClass:
    name: str
    generator: str
    params: dict = field(default_factory=dict)


@dataclass
class Mismatch:
    snr_db: float = 10.0
    gain_jitter_db: float = 6.0
    bandlimit_hz: Optional[float] = None


@dataclass
class SynthSpec:
    classes: list
    n_labeled_per_class: int = 50
    n_unlabeled: int = 800
    mismatch: Mismatch = field(default_factory=Mismatch)
    distractor_fraction: float = 0.3
    seed: int = 0
    clip_seconds: float = 1.0
    sample_rate: int = 16000
    background_snr_db: float = 10.0
    overlap_prob: float = 0.5
    overlap_snr_db: float = 3.0

    def __post_init__(self):
        self.classes = [c if isinstance(c, SynthClass) else SynthClass(**c) for c in self.classes]
        if isinstance(self.mismatch, dict):
            self.mismatch = Mismatch(**self.mismatch)
        self.validate()

    def validate(self):
        if len(self.classes) < 2:
            raise ValueError("need at least two classes")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")
        for c in self.classes:
            if c.generator not in GENERATORS:
                raise ValueError(f"unknown generator {c.generator!r} for class {c.name!r}")
        if not 0.0 <= self.distractor_fraction < 1.0:
            raise ValueError("distractor_fraction must lie in [0, 1)")
        if self.n_labeled_per_class < 1 or self.n_unlabeled < 0:
            raise ValueError("clip counts must be positive")
        if self.clip_seconds < 0.025:
            raise ValueError("clip_seconds too short")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(**doc)


def default_spec(seed=0, **overrides):
    """Four classes loosely mirroring siren, car horn, drilling and gun shot."""
    classes = [
        SynthClass("tone440", "tone", {"freq": 440.0, "jitter": 0.06, "harmonics": 3}),
        SynthClass("chirp", "chirp", {"f_lo": 350.0, "f_hi": 1300.0, "jitter": 0.15}),
        SynthClass("noiseband", "noiseband", {"center": 900.0, "bandwidth": 900.0,
                                              "jitter": 0.25}),
        SynthClass("impulses", "impulse_train", {"rate": 25.0, "resonance": 700.0,
                                                 "jitter": 0.3}),
    ]
    return SynthSpec(classes=classes, seed=seed, **overrides)


def _bandpass_noise(rng, n, rate, lo, hi):
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / rate)
    spec[(f < lo) | (f > hi)] = 0.0
    return np.fft.irfft(spec, n)


def _lowpass(x, rate, cutoff):
    spec = np.fft.rfft(x)
    f = np.fft.rfftfreq(len(x), 1.0 / rate)
    spec[f > cutoff] = 0.0
    return np.fft.irfft(spec, len(x))


def _rms(x):
    return float(np.sqrt(np.mean(x * x))) + 1e-12


def _pink_noise(rng, n):
    spec = np.fft.rfft(rng.standard_normal(n))
    spec[1:] /= np.sqrt(np.arange(1, len(spec)))
    spec[0] = 0.0
    return np.fft.irfft(spec, n)


def render(cls, rng, n, rate):
    """One exemplar of ``cls``, unit RMS."""
    p = cls.params
    t = np.arange(n) / rate
    j = p.get("jitter", 0.0)
    scale = 1.0 + j * rng.uniform(-1, 1)
    if cls.generator == "tone":
        f0 = p.get("freq", 440.0) * scale
        depth = rng.uniform(0.0, 0.005)  # slow vibrato
        phase = 2 * np.pi * np.cumsum(f0 * (1 + depth * np.sin(2 * np.pi * 5 * t))) / rate
        x = sum(np.sin(k * phase + rng.uniform(0, 2 * np.pi)) / k
                for k in range(1, int(p.get("harmonics", 1)) + 1))
    elif cls.generator == "chirp":
        lo, hi = p.get("f_lo", 500.0) * scale, p.get("f_hi", 2000.0) * scale
        if rng.random() < 0.5:
            lo, hi = hi, lo
        period = rng.uniform(0.3, 0.7) * n / rate
        sweep = lo + (hi - lo) * ((t / period) % 1.0)
        x = np.sin(2 * np.pi * np.cumsum(sweep) / rate)
    elif cls.generator == "noiseband":
        c = p.get("center", 1000.0) * scale
        bw = p.get("bandwidth", 500.0)
        x = _bandpass_noise(rng, n, rate, max(c - bw / 2, 20.0), c + bw / 2)
    elif cls.generator == "impulse_train":
        r = p.get("rate", 8.0) * scale
        res = p.get("resonance", 800.0) * (1.0 + j * rng.uniform(-1, 1))
        x = np.zeros(n)
        start = rng.integers(0, max(1, int(rate / r)))
        x[start::max(1, int(rate / r))] = 1.0
        kernel_t = np.arange(int(0.03 * rate)) / rate
        kernel = np.exp(-kernel_t / 0.006) * np.sin(2 * np.pi * res * kernel_t)
        x = np.convolve(x, kernel)[:n]
    else:
        raise ValueError(f"unknown generator {cls.generator!r}")
    return x / _rms(x)


def render_distractor(rng, n, rate):
    t = np.arange(n) / rate
    kind = rng.integers(3)
    if kind == 0:  # speech-like formant babble
        env = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(2, 6) * t) ** 2
        x = env * _bandpass_noise(rng, n, rate, 2500.0, 4500.0)
    elif kind == 1:  # high tone cluster
        x = sum(np.sin(2 * np.pi * rng.uniform(2000, 6000) * t) for _ in range(3))
    else:  # rumble
        x = _bandpass_noise(rng, n, rate, 30.0, 150.0)
    return x / _rms(x)


def _mix(signal, other, snr_db):
    return signal + other * (_rms(signal) / _rms(other)) * 10 ** (-snr_db / 20.0)


def _peak_normalize(x, rng, lo_db=-12.0, hi_db=-3.0):
    peak = np.max(np.abs(x)) + 1e-12
    return x / peak * 10 ** (rng.uniform(lo_db, hi_db) / 20.0)


def _exemplar(spec, ci, rng, n):
    """A class sound in its acoustic scene: quiet background, maybe an overlap."""
    rate = spec.sample_rate
    k = len(spec.classes)
    x = render(spec.classes[ci], rng, n, rate)
    if rng.random() < spec.overlap_prob:
        other = spec.classes[(ci + 1 + rng.integers(k - 1)) % k]
        x = _mix(x, render(other, rng, n, rate), spec.overlap_snr_db)
    return _mix(x, _pink_noise(rng, n), spec.background_snr_db)


@dataclass
class SyntheticCorpus:
    labeled: list  # AudioClip with label and fold
    unlabeled: list  # AudioClip without label
    truth: dict  # unlabeled id -> class name or DISTRACTOR
    spec: SynthSpec
    oracle: dict = field(default_factory=dict)


def generate(spec):
    """Build a corpus in memory; deterministic given ``spec.seed``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = int(round(spec.clip_seconds * spec.sample_rate))
    rate = spec.sample_rate
    names = [c.name for c in spec.classes]

    labeled = []
    for ci, cls in enumerate(spec.classes):
        folds = [(i % N_FOLDS) + 1 for i in range(spec.n_labeled_per_class)]
        for i, fold in enumerate(folds):
            x = _exemplar(spec, ci, rng, n)
            labeled.append(AudioClip(id=f"{cls.name}-{i:04d}", samples=_peak_normalize(x, rng),
                                     source="labeled", label=cls.name, fold=fold))

    n_dis = int(round(spec.n_unlabeled * spec.distractor_fraction))
    kinds = [names[i % len(names)] for i in range(spec.n_unlabeled - n_dis)] + [DISTRACTOR] * n_dis
    kinds = [kinds[i] for i in rng.permutation(len(kinds))]
    unlabeled, truth = [], {}
    mm = spec.mismatch
    for i, kind in enumerate(kinds):
        uid = f"web-{i:05d}"
        if kind == DISTRACTOR:
            x = _mix(render_distractor(rng, n, rate), _pink_noise(rng, n), spec.background_snr_db)
        else:
            x = _exemplar(spec, names.index(kind), rng, n)
        x = x * 10 ** (rng.uniform(-mm.gain_jitter_db, mm.gain_jitter_db) / 20.0)
        x = _mix(x, rng.standard_normal(n), mm.snr_db)
        if mm.bandlimit_hz:
            x = _lowpass(x, rate, mm.bandlimit_hz)
        unlabeled.append(AudioClip(id=uid, samples=_peak_normalize(x, rng, -20.0, -1.0),
                                   source="unlabeled"))
        truth[uid] = kind

    corpus = SyntheticCorpus(labeled, unlabeled, truth, spec)
    corpus.oracle = matched_filter_report(corpus)
    return corpus


def tone_statistic(x, rate, freq, jitter=0.06, pad=4):
    """Largest fraction of signal energy captured by a sinusoid near ``freq``."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    spec = np.abs(np.fft.rfft(x, n=pad * n)) ** 2
    f = np.fft.rfftfreq(pad * n, 1.0 / rate)
    band = (f >= freq * (1 - jitter)) & (f <= freq * (1 + jitter))
    energy = float(x @ x) + 1e-12
    return float(2.0 * spec[band].max() / (n * energy)) if band.any() else 0.0


def matched_filter_report(corpus, threshold=0.2):
    """Matched-filter oracle for every tone class on the unlabeled pool.

    A clip is called "tone <name>" iff the tone statistic exceeds
    ``threshold``; accuracy is measured over all non-distractor clips.
    """
    out = {}
    rate = corpus.spec.sample_rate
    for cls in corpus.spec.classes:
        if cls.generator != "tone":
            continue
        freq = cls.params.get("freq", 440.0)
        jit = cls.params.get("jitter", 0.0) + 0.01
        hits = total = tp = pos = 0
        for clip in corpus.unlabeled:
            kind = corpus.truth[clip.id]
            if kind == DISTRACTOR:
                continue
            called = tone_statistic(clip.samples, rate, freq, jit) > threshold
            is_pos = kind == cls.name
            hits += called == is_pos
            total += 1
            pos += is_pos
            tp += called and is_pos
        out[cls.name] = {"accuracy": hits / max(total, 1), "recall": tp / max(pos, 1),
                         "n": total, "threshold": threshold}
    return out


def write_corpus(corpus, out_dir):
    """Write WAVs, both manifests and the truth table under ``out_dir``."""
    out = Path(out_dir)
    (out / "labeled").mkdir(parents=True, exist_ok=True)
    (out / "unlabeled").mkdir(parents=True, exist_ok=True)
    rate = corpus.spec.sample_rate
    lab_entries, unl_entries = [], []
    for clip in corpus.labeled:
        path = out / "labeled" / f"{clip.id}.wav"
        write_wav(path, clip.samples, rate)
        lab_entries.append(ManifestEntry(clip.id, path, "labeled", clip.label, clip.fold,
                                         len(clip.samples) / rate))
    for clip in corpus.unlabeled:
        path = out / "unlabeled" / f"{clip.id}.wav"
        write_wav(path, clip.samples, rate)
        unl_entries.append(ManifestEntry(clip.id, path, "unlabeled",
                                         duration_s=len(clip.samples) / rate))
    write_manifest(out / "labeled.jsonl", lab_entries)
    write_manifest(out / "unlabeled.jsonl", unl_entries)
    with open(out / "truth.json", "w", encoding="utf-8") as fh:
        json.dump({"truth": corpus.truth, "matched_filter": corpus.oracle,
                   "spec": corpus.spec.to_dict()}, fh, sort_keys=True, indent=1)
    return out / "labeled.jsonl", out / "unlabeled.jsonl", out / "truth.json"
