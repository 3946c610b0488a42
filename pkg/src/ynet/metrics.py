"""Objective separation quality: SDR, SI-SNR and STOI, plus directory reports.

SDR here is the plain distortion ratio ``|s|^2 / |s - s_hat|^2`` on
mean-removed signals, not the BSS-Eval variant that allows a filtering
distortion, so numbers are not directly comparable with museval output.
Both dB metrics are capped to +-100 dB so that reports stay finite.

STOI follows Taal et al. (2011): 10 kHz, 256-sample Hann frames at 50%
overlap, 512-point FFT, 15 third-octave bands from 150 Hz, 30-frame
(384 ms) segments, -15 dB clipping, 40 dB silent-frame removal.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .audio import AudioClip, read_wav, resample
from .errors import UsageError

log = logging.getLogger(__name__)

DB_CAP = 100.0

STOI_RATE = 10000
STOI_FRAME = 256
STOI_FFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30
STOI_BETA = -15.0
STOI_DYN_RANGE = 40.0
_EPS = np.finfo(np.float64).eps


def _pair(reference, estimate):
    s = reference.samples if isinstance(reference, AudioClip) else np.asarray(reference, dtype=np.float64)
    e = estimate.samples if isinstance(estimate, AudioClip) else np.asarray(estimate, dtype=np.float64)
    if s.shape != e.shape:
        raise UsageError(f"length mismatch: reference has {s.size} samples, estimate {e.size}")
    if isinstance(reference, AudioClip) and isinstance(estimate, AudioClip):
        if reference.sample_rate != estimate.sample_rate:
            raise UsageError(
                f"sample rate mismatch: {reference.sample_rate} Hz vs {estimate.sample_rate} Hz"
            )
    if not np.any(s):
        raise UsageError("reference is all zeros")
    return s - s.mean(), e - e.mean()


def _capped_db(num, den):
    if den <= 0.0:
        return DB_CAP
    if num <= 0.0:
        return -DB_CAP
    return float(np.clip(10.0 * np.log10(num / den), -DB_CAP, DB_CAP))


def sdr(reference, estimate):
    """Signal-to-distortion ratio in dB."""
    s, e = _pair(reference, estimate)
    return _capped_db(np.dot(s, s), np.dot(s - e, s - e))


def si_snr(reference, estimate):
    """Scale-invariant SNR in dB; -100 when the estimate is orthogonal to the reference."""
    s, e = _pair(reference, estimate)
    dot = np.dot(e, s)
    if dot == 0.0:
        return -DB_CAP
    target = dot / np.dot(s, s) * s
    noise = e - target
    return _capped_db(np.dot(target, target), np.dot(noise, noise))


def _stoi_window():
    return np.hanning(STOI_FRAME + 2)[1:-1]


def _frames(x, hop):
    # starts at 0, hop, ... strictly below len - frame, as in the reference code
    starts = np.arange(0, x.size - STOI_FRAME, hop)
    return x[starts[:, None] + np.arange(STOI_FRAME)[None]]


def _remove_silent_frames(x, y):
    """Drop frames more than 40 dB below the reference's loudest, then overlap-add."""
    hop = STOI_FRAME // 2
    win = _stoi_window()
    fx = _frames(x, hop) * win
    fy = _frames(y, hop) * win
    energy = 20.0 * np.log10(np.linalg.norm(fx, axis=1) + _EPS)
    keep = (energy.max() - STOI_DYN_RANGE - energy) < 0 if energy.size else np.zeros(0, bool)
    fx, fy = fx[keep], fy[keep]
    n = fx.shape[0]
    length = (n - 1) * hop + STOI_FRAME if n else 0
    ox, oy = np.zeros(length), np.zeros(length)
    for i in range(n):
        ox[i * hop:i * hop + STOI_FRAME] += fx[i]
        oy[i * hop:i * hop + STOI_FRAME] += fy[i]
    return ox, oy


def third_octave_matrix(rate=STOI_RATE, n_fft=STOI_FFT, bands=STOI_BANDS, min_freq=STOI_MIN_FREQ):
    """``bands x (n_fft//2 + 1)`` 0/1 matrix grouping FFT bins into third-octave bands."""
    f = np.linspace(0, rate, n_fft + 1)[:n_fft // 2 + 1]
    k = np.arange(bands)
    lo = min_freq * 2.0 ** ((2 * k - 1) / 6)
    hi = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((bands, f.size))
    for i in range(bands):
        a = int(np.argmin((f - lo[i]) ** 2))
        b = int(np.argmin((f - hi[i]) ** 2))
        obm[i, a:b] = 1.0
    return obm


def stoi(reference, estimate, sample_rate=None):
    """Short-time objective intelligibility of ``estimate`` against ``reference``.

    Clips of any rate are resampled to 10 kHz first. Raises :class:`UsageError`
    when fewer than 30 frames (384 ms) survive silence removal.
    """
    if isinstance(reference, AudioClip) and isinstance(estimate, AudioClip):
        if reference.sample_rate != estimate.sample_rate:
            raise UsageError(
                f"sample rate mismatch: {reference.sample_rate} Hz vs {estimate.sample_rate} Hz"
            )
        rate = reference.sample_rate
    else:
        if sample_rate is None:
            raise UsageError("stoi on raw arrays needs sample_rate")
        rate = sample_rate
        reference, estimate = AudioClip(reference, rate), AudioClip(estimate, rate)
    if len(reference) != len(estimate):
        raise UsageError(f"length mismatch: reference has {len(reference)} samples, estimate {len(estimate)}")
    x = resample(reference, STOI_RATE).samples
    y = resample(estimate, STOI_RATE).samples
    x, y = _remove_silent_frames(x, y)

    hop = STOI_FRAME // 2
    win = _stoi_window()
    spec_x = np.fft.rfft(_frames(x, hop) * win, n=STOI_FFT, axis=1)
    spec_y = np.fft.rfft(_frames(y, hop) * win, n=STOI_FFT, axis=1)
    n_frames = spec_x.shape[0]
    if n_frames < STOI_SEGMENT:
        min_ms = ((STOI_SEGMENT - 1) * hop + STOI_FRAME) / STOI_RATE * 1000
        raise UsageError(
            f"STOI needs at least {min_ms:.0f} ms of non-silent audio "
            f"({STOI_SEGMENT} frames); got {n_frames} frames"
        )
    obm = third_octave_matrix()
    x_tob = np.sqrt(obm @ np.abs(spec_x.T) ** 2)
    y_tob = np.sqrt(obm @ np.abs(spec_y.T) ** 2)

    # all segments at once: (segments, bands, N)
    idx = np.arange(STOI_SEGMENT)[None] + np.arange(n_frames - STOI_SEGMENT + 1)[:, None]
    xs = x_tob[:, idx].transpose(1, 0, 2)
    ys = y_tob[:, idx].transpose(1, 0, 2)
    alpha = np.linalg.norm(xs, axis=2, keepdims=True) / (np.linalg.norm(ys, axis=2, keepdims=True) + _EPS)
    clip = 10.0 ** (-STOI_BETA / 20.0)
    yp = np.minimum(ys * alpha, xs * (1.0 + clip))
    xs = xs - xs.mean(axis=2, keepdims=True)
    yp = yp - yp.mean(axis=2, keepdims=True)
    xs = xs / (np.linalg.norm(xs, axis=2, keepdims=True) + _EPS)
    yp = yp / (np.linalg.norm(yp, axis=2, keepdims=True) + _EPS)
    return float(np.mean(np.sum(xs * yp, axis=2)))


@dataclass
class ClipScore:
    clip: str
    sdr_db: float
    si_snr_db: float
    stoi: float


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    missing: list = field(default_factory=list)

    def _column(self, name):
        return np.array([getattr(r, name) for r in self.rows], dtype=np.float64)

    def mean(self):
        return {k: float(self._column(k).mean()) for k in ("sdr_db", "si_snr_db", "stoi")} if self.rows else {}

    def median(self):
        return {k: float(np.median(self._column(k))) for k in ("sdr_db", "si_snr_db", "stoi")} if self.rows else {}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["clip", "sdr_db", "si_snr_db", "stoi"])
            for r in self.rows:
                out.writerow([r.clip, f"{r.sdr_db:.4f}", f"{r.si_snr_db:.4f}", f"{r.stoi:.4f}"])
            for label, agg in (("mean", self.mean()), ("median", self.median())):
                if agg:
                    out.writerow([label, f"{agg['sdr_db']:.4f}", f"{agg['si_snr_db']:.4f}", f"{agg['stoi']:.4f}"])


def score_pair(name, reference, estimate):
    return ClipScore(name, sdr(reference, estimate), si_snr(reference, estimate), stoi(reference, estimate))


def _wav_names(d):
    return {os.path.relpath(os.path.join(root, f), d)
            for root, _, files in os.walk(d) for f in files if f.lower().endswith(".wav")}


def evaluate_pairs(ref_dir, est_dir):
    """Score every WAV in ``ref_dir`` against the same relative path in ``est_dir``.

    Files present on only one side are logged and listed in ``missing``;
    the rest are still scored. Rows come out in sorted path order.
    """
    for d in (ref_dir, est_dir):
        if not os.path.isdir(d):
            raise FileNotFoundError(f"not a directory: {d}")
    refs, ests = _wav_names(ref_dir), _wav_names(est_dir)
    report = EvalReport()
    for name in sorted(refs ^ ests):
        side = "estimate" if name in refs else "reference"
        log.warning("%s: no matching %s file, skipped", name, side)
        report.missing.append(name)
    common = sorted(refs & ests)
    if not common:
        log.warning("no matching WAV pairs under %s and %s", ref_dir, est_dir)
    for name in common:
        ref = read_wav(os.path.join(ref_dir, name))
        est = read_wav(os.path.join(est_dir, name))
        if est.sample_rate != ref.sample_rate:
            est = resample(est, ref.sample_rate)
        n = min(len(ref), len(est))
        if len(ref) != len(est):
            log.warning("%s: lengths differ (%d vs %d), scoring the first %d samples", name, len(ref), len(est), n)
        report.rows.append(score_pair(name, AudioClip(ref.samples[:n], ref.sample_rate),
                                      AudioClip(est.samples[:n], ref.sample_rate)))
    return report
