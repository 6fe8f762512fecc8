"""MFCC extraction: 20 cepstra plus delta and double-delta per 10 ms frame."""

import json
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from scipy.fft import dct

CACHE_MAGIC = b"AEDMFCC1"


@dataclass(frozen=True)
class MfccParams:
    sample_rate: int = 16000
    frame_len: int = 400  # 25 ms
    frame_shift: int = 160  # 10 ms
    n_fft: int = 512
    n_mels: int = 26
    n_ceps: int = 20
    f_min: float = 0.0
    f_max: float = 8000.0
    pre_emphasis: float = 0.97
    log_floor: float = 1e-10
    delta_window: int = 2

    @property
    def n_features(self):
        return 3 * self.n_ceps

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def with_overrides(self, overrides):
        unknown = set(overrides) - set(asdict(self))
        if unknown:
            raise KeyError(f"unknown DSP parameter(s): {sorted(unknown)}")
        return replace(self, **overrides)


DEFAULT_PARAMS = MfccParams()


@dataclass(frozen=True)
class MfccMatrix:
    clip_id: str
    frames: np.ndarray  # T x 60
    params: MfccParams = DEFAULT_PARAMS

    @property
    def n_frames(self):
        return self.frames.shape[0]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(params=DEFAULT_PARAMS):
    """Triangular filters on the rfft bin grid, shape (n_mels, n_fft//2+1)."""
    n_bins = params.n_fft // 2 + 1
    freqs = np.arange(n_bins) * params.sample_rate / params.n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(params.f_min), hz_to_mel(params.f_max),
                                  params.n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    return np.clip(np.minimum(up, down), 0.0, None)


def frame_count(n_samples, params=DEFAULT_PARAMS):
    if n_samples < params.frame_len:
        return 0
    return (n_samples - params.frame_len) // params.frame_shift + 1


def append_deltas(static, window=2):
    """Append regression deltas and double-deltas (edges replicate)."""
    static = np.asarray(static, dtype=np.float64)
    if static.ndim != 2 or static.shape[0] < 1:
        raise ValueError("expected a T x D matrix with T >= 1")
    d1 = _deltas(static, window)
    d2 = _deltas(d1, window)
    return np.hstack([static, d1, d2])


def _deltas(c, window):
    T = c.shape[0]
    padded = np.pad(c, ((window, window), (0, 0)), mode="edge")
    denom = 2.0 * sum(n * n for n in range(1, window + 1))
    out = np.zeros_like(c)
    for n in range(1, window + 1):
        out += n * (padded[window + n:window + n + T] - padded[window - n:window - n + T])
    return out / denom


def log_mel_energies(samples, params=DEFAULT_PARAMS):
    x = np.asarray(samples, dtype=np.float64)
    T = frame_count(len(x), params)
    emph = np.empty_like(x)
    emph[0] = x[0]
    emph[1:] = x[1:] - params.pre_emphasis * x[:-1]
    idx = np.arange(params.frame_len)[None, :] + params.frame_shift * np.arange(T)[:, None]
    frames = emph[idx] * np.hamming(params.frame_len)[None, :]
    mag = np.abs(np.fft.rfft(frames, n=params.n_fft, axis=1))
    energies = mag @ mel_filterbank(params).T
    return np.log(np.maximum(energies, params.log_floor))


def extract_mfcc(clip, params=DEFAULT_PARAMS):
    """Compute the T x 60 MFCC matrix of a normalized 16 kHz clip.

    Pre-emphasis, Hamming-windowed 512-point magnitude spectrum, 26 mel
    filters, floored log, orthonormal DCT-II keeping c0..c19, then deltas.
    """
    x = np.asarray(clip.samples, dtype=np.float64)
    if getattr(clip, "sample_rate_hz", params.sample_rate) != params.sample_rate:
        raise ValueError(f"clip must be sampled at {params.sample_rate} Hz")
    if len(x) < params.frame_len:
        raise ValueError(f"clip {clip.id!r} too short: {len(x)} < {params.frame_len} samples")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"clip {clip.id!r} has non-finite samples")
    logmel = log_mel_energies(x, params)
    ceps = dct(logmel, type=2, axis=1, norm="ortho")[:, :params.n_ceps]
    return MfccMatrix(clip_id=clip.id, frames=append_deltas(ceps, params.delta_window),
                      params=params)


# Feature cache: magic, u32 header length, JSON header, float32 row-major frames.

def cache_path(cache_dir, clip_id):
    safe = "".join(ch if ch.isalnum() or ch in "-_.#" else "_" for ch in clip_id)
    return Path(cache_dir) / f"{safe}.mfcc"


def save_cached(path, mfcc):
    frames = np.ascontiguousarray(mfcc.frames, dtype="<f4")
    header = json.dumps({"clip_id": mfcc.clip_id, "T": frames.shape[0], "D": frames.shape[1],
                         "params": mfcc.params.to_dict()}, sort_keys=True).encode()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC + struct.pack("<I", len(header)) + header + frames.tobytes())


def load_cached(path, params=DEFAULT_PARAMS, clip_id=None):
    """Read a cached matrix; ``None`` if absent, corrupt or stale."""
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        return None
    if not data.startswith(CACHE_MAGIC):
        return None
    n = struct.unpack("<I", data[8:12])[0]
    try:
        header = json.loads(data[12:12 + n])
    except ValueError:
        return None
    if header.get("params") != params.to_dict():
        return None
    if clip_id is not None and header.get("clip_id") != clip_id:
        return None
    body = data[12 + n:]
    T, D = header["T"], header["D"]
    if len(body) != 4 * T * D:
        return None
    frames = np.frombuffer(body, dtype="<f4").reshape(T, D).astype(np.float64)
    return MfccMatrix(clip_id=header["clip_id"], frames=frames, params=params)


def mfcc_cached(clip, cache_dir=None, params=DEFAULT_PARAMS):
    """MFCCs rounded to float32 precision, via the cache when given.

    Rounding happens on both paths so cached and fresh runs agree bit for bit.
    """
    if cache_dir is not None:
        path = cache_path(cache_dir, clip.id)
        hit = load_cached(path, params, clip.id)
        if hit is not None:
            return hit
    m = extract_mfcc(clip, params)
    m = MfccMatrix(m.clip_id, m.frames.astype(np.float32).astype(np.float64), params)
    if cache_dir is not None:
        save_cached(path, m)
    return m
