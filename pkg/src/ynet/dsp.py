"""STFT analysis, mixture-phase ISTFT synthesis and mel rendering.

Framing is uncentred: a clip of ``n`` samples yields
``(n - window_len) // hop + 1`` frames, which is exactly 128 for a
67072-sample window at the default 2048/512 geometry. Of the
``window_len // 2 + 1`` real-FFT bins the lowest ``freq_bins`` form the
magnitude/phase planes the network sees, so the default sets aside only the
Nyquist bin. The set-aside bins ride along as a complex ``residual`` so that
``istft(stft(x))`` is exact; masking scales them by the top kept row's gain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio import AudioClip
from .errors import ConfigError, UsageError

# overlap-add envelope floor, relative to its peak; keeps masked edges bounded
ENVELOPE_FLOOR = 0.1
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 2048
    hop: int = 512
    freq_bins: int = 1024

    def __post_init__(self):
        if self.window_len <= 0 or self.hop <= 0:
            raise ConfigError("window_len and hop must be positive")
        if not 1 <= self.freq_bins <= self.window_len // 2 + 1:
            raise ConfigError(
                f"freq_bins={self.freq_bins} outside 1..{self.window_len // 2 + 1}"
            )

    @property
    def fft_len(self):
        return self.window_len

    def frames(self, n):
        return (n - self.window_len) // self.hop + 1

    def samples_for(self, frames):
        """Clip length that frames to exactly ``frames`` columns."""
        return (frames - 1) * self.hop + self.window_len

    def window(self):
        # periodic Hann: overlap-adds to a constant at 75% overlap
        n = np.arange(self.window_len)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.window_len)


@dataclass
class ComplexSpectrogram:
    magnitude: np.ndarray
    phase: np.ndarray
    config: StftConfig
    original_length: int
    sample_rate: int = 44100
    residual: np.ndarray | None = None

    @property
    def shape(self):
        return self.magnitude.shape

    def with_magnitude(self, magnitude):
        """Same phase and residual, new magnitude plane."""
        return ComplexSpectrogram(np.asarray(magnitude), self.phase, self.config,
                                  self.original_length, self.sample_rate, self.residual)

    def apply_mask(self, mask):
        """Multiply the magnitude by ``mask`` (clamped at 0); phase untouched."""
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != self.magnitude.shape:
            raise ConfigError(f"mask shape {mask.shape} != spectrogram shape {self.magnitude.shape}")
        residual = None
        if self.residual is not None:
            residual = self.residual * np.maximum(mask[-1], 0.0)
        return ComplexSpectrogram(np.maximum(mask * self.magnitude, 0.0), self.phase, self.config,
                                  self.original_length, self.sample_rate, residual)


def stft(clip, cfg=StftConfig()):
    x = clip.samples
    if x.size < cfg.window_len:
        raise UsageError(
            f"clip of {x.size} samples is shorter than one STFT window ({cfg.window_len})"
        )
    frames = sliding_window_view(x, cfg.window_len)[::cfg.hop]
    full = np.fft.rfft(frames * cfg.window(), n=cfg.fft_len, axis=1).T
    spec = full[:cfg.freq_bins]
    residual = full[cfg.freq_bins:] if full.shape[0] > cfg.freq_bins else None
    return ComplexSpectrogram(np.abs(spec), np.angle(spec), cfg, x.size, clip.sample_rate, residual)


def istft(spec):
    """Weighted overlap-add inverse of :func:`stft` (Hann analysis and synthesis)."""
    cfg = spec.config
    full_bins = cfg.fft_len // 2 + 1
    n_frames = spec.magnitude.shape[1]
    z = np.zeros((full_bins, n_frames), dtype=np.complex128)
    z[:cfg.freq_bins] = spec.magnitude * np.exp(1j * spec.phase)
    if spec.residual is not None:
        z[cfg.freq_bins:] = spec.residual
    frames = np.fft.irfft(z.T, n=cfg.fft_len, axis=1)[:, :cfg.window_len]
    win = cfg.window()
    length = max(cfg.samples_for(n_frames), spec.original_length)
    out = np.zeros(length)
    env = np.zeros(length)
    sq = win * win
    for t in range(n_frames):
        s = t * cfg.hop
        out[s:s + cfg.window_len] += frames[t] * win
        env[s:s + cfg.window_len] += sq
    # the first and last few hundred samples are covered by window tails only;
    # dividing by the bare envelope there amplifies any masking inconsistency
    out /= np.maximum(env, ENVELOPE_FLOOR * env.max())
    return AudioClip(out[:spec.original_length], spec.sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels, cfg, sample_rate):
    """Triangular HTK-scale filters spanning 0 Hz to Nyquist, ``n_mels x freq_bins``."""
    if n_mels < 1:
        raise ConfigError("n_mels must be at least 1")
    bin_hz = np.arange(cfg.freq_bins) * sample_rate / cfg.fft_len
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz - lo) / (mid - lo)
    falling = (hi - bin_hz) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_render(spec, n_mels=128):
    """``log10`` mel power, ``n_mels x time_bins``."""
    fb = mel_filterbank(n_mels, spec.config, spec.sample_rate)
    return np.log10(fb @ (spec.magnitude ** 2) + LOG_FLOOR)


def to_pgm(matrix):
    """ASCII PGM (P2) text, linearly mapped onto 0..255 over the matrix range.

    Row 0 of the image is row 0 of ``matrix``. A constant matrix renders as
    all zeros.
    """
    m = np.asarray(matrix, dtype=np.float64)
    lo, hi = float(m.min()), float(m.max())
    if hi > lo:
        px = np.round((m - lo) / (hi - lo) * 255.0).astype(int)
    else:
        px = np.zeros(m.shape, dtype=int)
    rows, cols = px.shape
    lines = ["P2", f"{cols} {rows}", "255"]
    lines.extend(" ".join(map(str, row)) for row in px)
    return "\n".join(lines) + "\n"


def read_pgm(text):
    """Parse the P2 text written by :func:`to_pgm` back into an int matrix."""
    tokens = [t for line in text.splitlines() if not line.startswith("#") for t in line.split()]
    if not tokens or tokens[0] != "P2":
        raise ValueError("not an ASCII PGM (P2) image")
    cols, rows = int(tokens[1]), int(tokens[2])
    return np.array(tokens[4:4 + rows * cols], dtype=int).reshape(rows, cols)


def to_csv(matrix):
    return "\n".join(",".join(f"{v:.6g}" for v in row) for row in np.asarray(matrix)) + "\n"
