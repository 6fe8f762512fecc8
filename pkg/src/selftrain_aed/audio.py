"""RIFF/WAVE PCM decoding and a Kaiser-windowed sinc resampler."""

import math
import struct
import wave

import numpy as np

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class AudioDecodeError(ValueError):
    """Raised for unsupported, truncated or empty audio files."""


def _parse_chunks(data):
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise AudioDecodeError("not a RIFF/WAVE file")
    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        size = struct.unpack("<I", data[pos + 4:pos + 8])[0]
        body = data[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise AudioDecodeError("truncated fmt chunk")
            fmt = body
        elif cid == b"data":
            if len(body) < size:
                raise AudioDecodeError(
                    f"truncated data chunk: header says {size} bytes, found {len(body)}")
            payload = body
            break
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise AudioDecodeError("missing fmt chunk")
    if payload is None:
        raise AudioDecodeError("missing data chunk")
    return fmt, payload


def read_wav(path):
    """Decode a PCM WAV file.

    Returns ``(samples, sample_rate)`` where ``samples`` is a float64 array of
    shape ``(n_frames, n_channels)`` scaled to [-1, 1].
    """
    with open(path, "rb") as fh:
        data = fh.read()
    fmt, payload = _parse_chunks(data)
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 26:
            raise AudioDecodeError("truncated WAVE_FORMAT_EXTENSIBLE header")
        tag = struct.unpack("<H", fmt[24:26])[0]
    if channels < 1 or rate < 1:
        raise AudioDecodeError(f"invalid header: channels={channels} rate={rate}")

    if tag == WAVE_FORMAT_PCM and bits in (8, 16, 24, 32):
        width = bits // 8
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        width = 4
    else:
        raise AudioDecodeError(f"unsupported codec: format tag {tag:#06x}, {bits} bits")

    frame_bytes = width * channels
    n_frames = len(payload) // frame_bytes
    if n_frames == 0:
        raise AudioDecodeError("zero-length audio")
    raw = payload[:n_frames * frame_bytes]

    if tag == WAVE_FORMAT_IEEE_FLOAT:
        x = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        if not np.all(np.isfinite(x)):
            raise AudioDecodeError("non-finite float samples")
        x = np.clip(x, -1.0, 1.0)
    elif bits == 8:
        x = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif bits == 16:
        x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif bits == 24:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        x = v.astype(np.float64) / float(1 << 23)
    else:
        x = np.frombuffer(raw, dtype="<i4").astype(np.float64) / float(1 << 31)
    return x.reshape(n_frames, channels), rate


def write_wav(path, samples, sample_rate, bits=16):
    """Write a mono or multi-channel signal in [-1, 1] as integer PCM."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    x = np.clip(x, -1.0, 1.0)
    if bits == 16:
        pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
    elif bits == 8:
        pcm = np.clip(np.round(x * 128.0) + 128, 0, 255).astype(np.uint8).tobytes()
    elif bits == 24:
        v = np.clip(np.round(x * (1 << 23)), -(1 << 23), (1 << 23) - 1).astype(np.int32)
        b = v.astype("<i4").view(np.uint8).reshape(-1, 4)[:, :3]
        pcm = b.tobytes()
    else:
        raise ValueError(f"unsupported bit depth {bits}")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(x.shape[1])
        w.setsampwidth(bits // 8)
        w.setframerate(int(sample_rate))
        w.writeframes(pcm)


def write_wav_float(path, samples, sample_rate):
    """Write 32-bit IEEE float WAV (the stdlib ``wave`` module cannot)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n_ch = x.shape[1]
    payload = x.astype("<f4").tobytes()
    fmt = struct.pack("<HHIIHH", WAVE_FORMAT_IEEE_FLOAT, n_ch, sample_rate,
                      sample_rate * 4 * n_ch, 4 * n_ch, 32)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)


def _kaiser(t, beta):
    # continuous Kaiser window on t in [-1, 1]
    inside = np.abs(t) <= 1.0
    arg = np.sqrt(np.clip(1.0 - t * t, 0.0, None))
    return np.where(inside, np.i0(beta * arg) / np.i0(beta), 0.0)


def resample(x, rate_in, rate_out, beta=8.6, taps=32, chunk=1 << 16):
    """Rational-ratio resampling with a Kaiser-windowed sinc kernel.

    The kernel spans ``taps`` zero crossings measured at the lower of the two
    rates, so every polyphase branch has ``taps`` taps when upsampling.
    Output length is ``ceil(len(x) * rate_out / rate_in)``.
    """
    x = np.asarray(x, dtype=np.float64)
    g = math.gcd(int(rate_in), int(rate_out))
    up, down = int(rate_out) // g, int(rate_in) // g
    if up == down:
        return x.copy()
    n_in = len(x)
    n_out = -(-n_in * up // down)

    fc = 0.5 * min(1.0, up / down)  # cutoff, cycles per input sample
    half = (taps / 2) / (2 * fc)  # half-width in input samples
    k_max = int(math.ceil(half))
    offsets = np.arange(-k_max, k_max + 1)
    # one row of taps per polyphase branch
    frac = np.arange(up) / up
    tau = frac[:, None] - offsets[None, :]
    table = 2 * fc * np.sinc(2 * fc * tau) * _kaiser(tau / half, beta)

    padded = np.concatenate([np.zeros(k_max), x, np.zeros(k_max + 1)])
    y = np.empty(n_out)
    for start in range(0, n_out, chunk):
        n = np.arange(start, min(start + chunk, n_out), dtype=np.int64)
        pos = n * down
        base = pos // up
        phase = pos % up
        idx = base[:, None] + offsets[None, :] + k_max
        y[start:start + len(n)] = np.einsum("ij,ij->i", padded[idx], table[phase])
    return y
