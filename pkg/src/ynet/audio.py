"""Mono audio clips: RIFF/WAVE reading and writing, windowing, resampling."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from math import gcd

import numpy as np
from scipy.signal import resample_poly

from .errors import FormatError

WINDOW_LEN = 67072
CANONICAL_RATE = 44100

_PCM = 1
_FLOAT = 3
_EXTENSIBLE = 0xFFFE


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


def read_wav(path):
    """Read a PCM-16 or float-32 WAV file, downmixing stereo to mono."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise OSError(f"{path}: truncated before RIFF header")
    riff, _, wave = struct.unpack("<4sI4s", blob[:12])
    if riff != b"RIFF" or wave != b"WAVE":
        raise FormatError(f"{path}: RIFF chunk: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(blob):
        cid, size = struct.unpack("<4sI", blob[pos:pos + 8])
        body = blob[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise OSError(f"{path}: truncated inside {cid.decode('latin-1')!r} chunk")
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise FormatError(f"{path}: fmt chunk missing")
    if data is None:
        raise OSError(f"{path}: data chunk missing (truncated file?)")
    if len(fmt) < 16:
        raise FormatError(f"{path}: fmt chunk too short ({len(fmt)} bytes)")

    code, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if code == _EXTENSIBLE:
        if len(fmt) < 26:
            raise FormatError(f"{path}: fmt chunk: extensible header too short")
        code = struct.unpack("<H", fmt[24:26])[0]
    if channels not in (1, 2):
        raise FormatError(f"{path}: fmt chunk: {channels} channels unsupported (mono or stereo only)")
    if code == _PCM and bits == 16:
        dtype, scale = "<i2", 1.0 / 32768.0
    elif code == _FLOAT and bits == 32:
        dtype, scale = "<f4", 1.0
    else:
        raise FormatError(f"{path}: fmt chunk: encoding {code} with {bits} bits unsupported")
    if rate == 0:
        raise FormatError(f"{path}: fmt chunk: sample rate 0")

    frame_bytes = channels * bits // 8
    usable = len(data) - len(data) % frame_bytes
    raw = np.frombuffer(data[:usable], dtype=dtype).astype(np.float64) * scale
    raw = raw.reshape(-1, channels)
    mono = raw[:, 0] if channels == 1 else 0.5 * (raw[:, 0] + raw[:, 1])
    return AudioClip(mono, rate)


def write_wav(clip, path, encoding="pcm16"):
    """Write ``clip`` as a mono WAV file (``pcm16`` clamps to [-1, 1])."""
    if encoding == "pcm16":
        x = np.clip(clip.samples, -1.0, 1.0) * 32768.0
        payload = np.clip(np.round(x), -32768, 32767).astype("<i2").tobytes()
        code, bits = _PCM, 16
    elif encoding == "float32":
        payload = clip.samples.astype("<f4").tobytes()
        code, bits = _FLOAT, 32
    else:
        raise ValueError(f"unknown encoding {encoding!r}; use pcm16 or float32")
    block = bits // 8
    fmt = struct.pack("<HHIIHH", code, 1, clip.sample_rate, clip.sample_rate * block, block, bits)
    header = b"".join([
        struct.pack("<4sI4s", b"RIFF", 4 + 8 + len(fmt) + 8 + len(payload), b"WAVE"),
        struct.pack("<4sI", b"fmt ", len(fmt)), fmt,
        struct.pack("<4sI", b"data", len(payload)),
    ])
    with open(os.fspath(path), "wb") as fh:
        fh.write(header)
        fh.write(payload)


def slice_windows(clip, window_len=WINDOW_LEN, hop=WINDOW_LEN):
    """Cut ``clip`` into fixed-length windows starting every ``hop`` samples.

    A trailing partial window is zero-padded when at least half full and
    dropped otherwise.
    """
    if window_len <= 0 or hop <= 0:
        raise ValueError("window_len and hop must be positive")
    x = clip.samples
    out = []
    start = 0
    while start < x.size:
        chunk = x[start:start + window_len]
        if chunk.size < window_len:
            if 2 * chunk.size < window_len:
                break
            chunk = np.concatenate([chunk, np.zeros(window_len - chunk.size)])
        out.append(AudioClip(chunk, clip.sample_rate))
        start += hop
    return out


def _kaiser_sinc(up, down, taps_per_branch=64, beta=8.6):
    # 32 zero crossings either side of the centre at the slower of the two rates
    rate = max(up, down)
    half = taps_per_branch // 2 * rate
    n = np.arange(-half, half + 1)
    h = np.sinc(n / rate) * np.kaiser(2 * half + 1, beta)
    return h / h.sum()


def resample(clip, target_rate):
    """Rational-ratio resampling with a Kaiser-windowed sinc (beta 8.6).

    Output length is ``round(n * target / source)``.
    """
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    src = clip.sample_rate
    if target_rate == src:
        return AudioClip(clip.samples.copy(), src)
    g = gcd(src, target_rate)
    up, down = target_rate // g, src // g
    n_out = int(round(clip.samples.size * target_rate / src))
    if clip.samples.size == 0:
        return AudioClip(np.zeros(0), target_rate)
    y = resample_poly(clip.samples, up, down, window=_kaiser_sinc(up, down))
    if y.size < n_out:
        y = np.concatenate([y, np.zeros(n_out - y.size)])
    return AudioClip(y[:n_out], target_rate)
