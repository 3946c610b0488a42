"""Datasets, the synthetic stand-in corpus and the training loop.

Real data uses the stems layout ``<root>/<song>/mixture.wav`` and
``vocals.wav``. Songs are visited in lexicographic order and each is cut into
67072-sample windows at identical offsets in both stems. The full-scale
recipe is ynet at base 16, batch 16, lr 1e-4 for 100 epochs over the 100
MUSDB18 training songs, which comes to roughly 497 batches per epoch
depending on song lengths.

The synthetic corpus keeps everything desk-sized: a "vocal" is a harmonic
tone with a gliding pitch and tremolo, the "accompaniment" is pink-ish noise
plus a low tone bed, and the two are mixed at a drawn ratio within +-6 dB.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .audio import CANONICAL_RATE, WINDOW_LEN, AudioClip, read_wav, resample, slice_windows
from .checkpoint import save_checkpoint
from .dsp import stft
from .errors import ConfigError, TrainingDiverged, UsageError
from .model import ModelConfig, SeparationNet, parse_key_values
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass
class ExamplePair:
    mixture: np.ndarray
    vocals: np.ndarray
    source: str
    sample_rate: int = CANONICAL_RATE

    def __post_init__(self):
        if self.mixture.shape != self.vocals.shape:
            raise ConfigError(f"{self.source}: mixture {self.mixture.shape} and vocals {self.vocals.shape} differ")


@dataclass
class TrainConfig:
    """Everything a training run needs; mirrors the flat key=value config file.

    Model settings may appear in the same file under their own names
    (``architecture``, ``base_channels`` ...) or prefixed with ``model.``.
    """

    data: str | None = None
    synth_pairs: int = 0
    val_data: str | None = None
    val_synth_pairs: int = 0
    epochs: int = 100
    batch: int = 2
    lr: float = 1e-4
    seed: int = 0
    checkpoint: str | None = None
    loss_log: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")

    @classmethod
    def from_dict(cls, items):
        own = {f.name: f for f in dataclasses.fields(cls) if f.name != "model"}
        top, model_kw = {}, {}
        for key, raw in items.items():
            key = key.replace("-", "_")
            if key in own:
                if raw is None or raw == "":
                    top[key] = None
                elif own[key].type in ("int", int):
                    top[key] = int(raw)
                elif own[key].type in ("float", float):
                    top[key] = float(raw)
                else:
                    top[key] = str(raw)
            else:
                model_kw[key[6:] if key.startswith("model.") else key] = raw
        if "arch" in model_kw:
            model_kw["architecture"] = model_kw.pop("arch")
        return cls(model=ModelConfig.from_dict(model_kw), **top)

    @classmethod
    def from_text(cls, text):
        return cls.from_dict(parse_key_values(text))

    def to_text(self):
        lines = [f"{f.name}={'' if getattr(self, f.name) is None else getattr(self, f.name)}"
                 for f in dataclasses.fields(self) if f.name != "model"]
        lines += [f"model.{line}" for line in self.model.to_text().splitlines()]
        return "\n".join(lines) + "\n"


# -- datasets -------------------------------------------------------------

def build_dataset(root, window_len=WINDOW_LEN, sample_rate=CANONICAL_RATE):
    """Window every ``<root>/<song>/{mixture,vocals}.wav`` pair into ExamplePairs."""
    if not os.path.isdir(root):
        raise FileNotFoundError(f"dataset directory not found: {root}")
    pairs = []
    for song in sorted(os.listdir(root)):
        folder = os.path.join(root, song)
        if not os.path.isdir(folder):
            continue
        mix_path = os.path.join(folder, "mixture.wav")
        voc_path = os.path.join(folder, "vocals.wav")
        if not os.path.isfile(mix_path):
            log.warning("%s: no mixture.wav, song skipped", folder)
            continue
        if not os.path.isfile(voc_path):
            log.warning("%s: no vocals.wav, song skipped", folder)
            continue
        mix, voc = read_wav(mix_path), read_wav(voc_path)
        for name, clip in (("mixture", mix), ("vocals", voc)):
            if clip.sample_rate != sample_rate:
                log.warning("%s/%s.wav: %d Hz, resampling to %d Hz", song, name, clip.sample_rate, sample_rate)
        mix, voc = resample(mix, sample_rate), resample(voc, sample_rate)
        if len(mix) != len(voc):
            n = min(len(mix), len(voc))
            log.warning("%s: mixture has %d samples, vocals %d; truncating to %d", song, len(mix), len(voc), n)
            mix, voc = AudioClip(mix.samples[:n], sample_rate), AudioClip(voc.samples[:n], sample_rate)
        for i, (m, v) in enumerate(zip(slice_windows(mix, window_len), slice_windows(voc, window_len))):
            pairs.append(ExamplePair(m.samples, v.samples, f"{song}:{i}", sample_rate))
    return pairs


def _pink_noise(rng, n):
    spectrum = rng.standard_normal(n // 2 + 1) + 1j * rng.standard_normal(n // 2 + 1)
    f = np.arange(n // 2 + 1, dtype=np.float64)
    f[0] = 1.0
    spectrum /= np.sqrt(f)
    spectrum[0] = 0.0
    x = np.fft.irfft(spectrum, n)
    return x / np.std(x)


def synth_pair(rng, n=WINDOW_LEN, sample_rate=CANONICAL_RATE, index=0):
    """One synthetic (vocal, accompaniment) example; returns ExamplePair and the drawn ratio in dB."""
    t = np.arange(n) / sample_rate
    # vocal: 3-6 harmonics of a pitch gliding between two points in 120-600 Hz
    f_start, f_end = rng.uniform(120.0, 600.0, size=2)
    glide = f_start * (f_end / f_start) ** (t / t[-1])
    vib_rate, vib_depth = rng.uniform(4.0, 7.0), rng.uniform(0.005, 0.02)
    inst_freq = glide * (1.0 + vib_depth * np.sin(2 * np.pi * vib_rate * t))
    phase = 2 * np.pi * np.cumsum(inst_freq) / sample_rate
    n_harm = int(rng.integers(3, 7))
    amps = rng.uniform(0.3, 1.0, size=n_harm) / np.arange(1, n_harm + 1)
    vocal = sum(a * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
                for k, a in zip(range(1, n_harm + 1), amps))
    trem_rate, trem_depth = rng.uniform(3.0, 6.0), rng.uniform(0.2, 0.5)
    vocal *= 1.0 - trem_depth * (0.5 + 0.5 * np.sin(2 * np.pi * trem_rate * t + rng.uniform(0, 2 * np.pi)))

    # accompaniment: pink-ish noise plus a bed of low sustained tones
    bed = sum(rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * rng.uniform(40.0, 100.0) * t + rng.uniform(0, 2 * np.pi))
              for _ in range(int(rng.integers(2, 4))))
    accomp = _pink_noise(rng, n) + bed / np.std(bed)

    ratio_db = rng.uniform(-6.0, 6.0)
    accomp *= np.sqrt(np.mean(vocal ** 2) / np.mean(accomp ** 2) / 10 ** (ratio_db / 10))
    mix = vocal + accomp
    gain = 0.9 / np.max(np.abs(mix))
    pair = ExamplePair((mix * gain).astype(np.float32).astype(np.float64),
                       (vocal * gain).astype(np.float32).astype(np.float64), f"synth:{index}", sample_rate)
    return pair, ratio_db


def synth_dataset(seed, n_pairs, n=WINDOW_LEN, sample_rate=CANONICAL_RATE):
    """``n_pairs`` reproducible synthetic pairs; pair ``i`` depends only on ``(seed, i)``.

    Samples are rounded to float32 so that a dataset written to float WAV and
    read back is bit-identical to the in-memory one.
    """
    if n_pairs < 1:
        raise UsageError(f"n_pairs must be >= 1, got {n_pairs}")
    return [synth_pair(np.random.default_rng([seed, i]), n, sample_rate, i)[0] for i in range(n_pairs)]


# -- training ---------------------------------------------------------------

@dataclass
class _Prepared:
    wave: np.ndarray
    mix_mag: np.ndarray
    voc_mag: np.ndarray


def _prepare(pairs, cfg):
    """Stack windows and their STFT magnitudes (float32) for the model geometry."""
    if not pairs:
        return None
    n = cfg.wave_len
    waves, mixes, vocs = [], [], []
    for p in pairs:
        if p.mixture.size != n:
            raise ConfigError(f"{p.source}: window of {p.mixture.size} samples, model expects {n}")
        waves.append(p.mixture)
        mixes.append(stft(AudioClip(p.mixture, p.sample_rate), cfg.stft).magnitude)
        vocs.append(stft(AudioClip(p.vocals, p.sample_rate), cfg.stft).magnitude)
    return _Prepared(np.stack(waves).astype(np.float32), np.stack(mixes).astype(np.float32),
                     np.stack(vocs).astype(np.float32))


def batch_loss(net, data, idx, training):
    out = net(data.wave[idx], data.mix_mag[idx], training=training)
    target = ag.Tensor(data.voc_mag[idx])
    est = out * ag.Tensor(data.mix_mag[idx]) if net.cfg.predicts_mask else out
    return ag.mse(est, target)


def evaluate_loss(net, data, batch):
    """Mean eval-mode loss over ``data``, weighted by batch size."""
    total, count = 0.0, 0
    for start in range(0, data.wave.shape[0], batch):
        idx = np.arange(start, min(start + batch, data.wave.shape[0]))
        total += batch_loss(net, data, idx, training=False).item() * idx.size
        count += idx.size
    return total / count


@dataclass
class TrainResult:
    model: SeparationNet
    log: list
    val_losses: list

    @property
    def final_train_loss(self):
        return self.log[-1]["train_loss"] if self.log else math.nan


def _load_pairs(data, synth, seed):
    if data:
        return build_dataset(data)
    if synth:
        return synth_dataset(seed, synth)
    return []


def train(cfg, pairs=None, val_pairs=None, on_step=None):
    """Train a fresh model under ``cfg``.

    ``pairs``/``val_pairs`` override the datasets named in the config. One
    loss-log row is written per optimiser step; the last row of each epoch
    also carries the validation loss when a validation set exists. The
    checkpoint (if configured) is rewritten after every epoch.
    """
    mcfg = cfg.model
    if pairs is None:
        pairs = _load_pairs(cfg.data, cfg.synth_pairs, cfg.seed)
    if val_pairs is None:
        val_pairs = _load_pairs(cfg.val_data, cfg.val_synth_pairs, cfg.seed + 10_000)
    if not pairs:
        raise UsageError("training dataset is empty")
    data = _prepare(pairs, mcfg)
    val = _prepare(val_pairs, mcfg)

    net = SeparationNet(mcfg, seed=cfg.seed)
    params = net.parameters()
    opt = AdamState(lr=cfg.lr)
    order_rng = np.random.default_rng([cfg.seed, 2])
    rows, val_losses = [], []
    log_fh = None
    if cfg.loss_log:
        log_fh = open(cfg.loss_log, "w", newline="")
        writer = csv.writer(log_fh)
        writer.writerow(["epoch", "step", "train_loss", "val_loss"])
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = order_rng.permutation(len(pairs))
            batches = [order[i:i + cfg.batch] for i in range(0, len(order), cfg.batch)]
            for b, idx in enumerate(batches):
                net.zero_grad()
                loss = batch_loss(net, data, idx, training=True)
                value = loss.item()
                if not np.isfinite(value):
                    names = ", ".join(pairs[i].source for i in idx)
                    raise TrainingDiverged(
                        f"non-finite loss {value} at epoch {epoch}, step {net.step + 1} (batch: {names})"
                    )
                loss.backward()
                adam_step(params, opt)
                net.step += 1
                row = {"epoch": epoch, "step": net.step, "train_loss": value, "val_loss": None}
                if b == len(batches) - 1 and val is not None:
                    row["val_loss"] = evaluate_loss(net, val, cfg.batch)
                    val_losses.append(row["val_loss"])
                rows.append(row)
                if log_fh:
                    writer.writerow([epoch, net.step, repr(value),
                                     "" if row["val_loss"] is None else repr(row["val_loss"])])
                    log_fh.flush()
                if on_step:
                    on_step(row)
            if cfg.checkpoint:
                save_checkpoint(net, cfg.checkpoint)
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(net, rows, val_losses)


def read_loss_log(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
