"""Y-Net mask estimator and its two single-branch ablations.

Architectures
-------------
``ynet``
    spectral encoder + waveform encoder (learnable filterbank front end),
    merged in a shared core, one decoder fed by both branches' skips.
``unet_spec``
    spectral encoder only.
``unet_wave``
    waveform encoder only; its head emits a magnitude estimate directly
    (ReLU head) instead of a bounded mask.

Channel plan for base ``b`` and depth ``D``: the stem maps 1 -> b, encoder
level ``l`` maps ``b*2**(l-1)`` -> ``b*2**l`` and halves H and W, the core
maps the concatenated ``b*2**D`` features of every branch back to
``b*2**D``, and decoder level ``l`` mirrors encoder level ``l`` by emitting
``b*2**(l-1)`` channels.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import autograd as ag
from .audio import AudioClip, CANONICAL_RATE, resample
from .dsp import ComplexSpectrogram, StftConfig, istft, stft
from .errors import ConfigError
from .filterbank import FilterbankConfig, check_framing, learnable_spectrogram
from .filterbank import init_params as init_filterbank

log = logging.getLogger(__name__)

ARCHITECTURES = ("ynet", "unet_spec", "unet_wave")


@dataclass(frozen=True)
class ModelConfig:
    architecture: str = "ynet"
    base_channels: int = 16
    depth: int = 5
    dilations: tuple = (1, 2, 4, 8, 16)
    dropout: float = 0.1
    hardtanh_lo: float = 0.0
    hardtanh_hi: float = 1.0
    leaky_slope: float = 0.01
    log_mag: bool = False
    sample_rate: int = CANONICAL_RATE
    stft: StftConfig = field(default_factory=StftConfig)
    filterbank: FilterbankConfig = field(default_factory=FilterbankConfig)

    def __post_init__(self):
        arch = self.architecture.replace("-", "_")
        object.__setattr__(self, "architecture", arch)
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}; expected one of {ARCHITECTURES}")
        if self.depth < 1:
            raise ConfigError("depth must be at least 1")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be at least 1")
        if len(self.dilations) != self.depth:
            raise ConfigError(f"need {self.depth} encoder dilations, got {self.dilations}")
        if not self.hardtanh_lo < self.hardtanh_hi:
            raise ConfigError("hardtanh_lo must be below hardtanh_hi")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")
        f, t = self.spec_shape
        step = 2 ** self.depth
        if f % step or t % step:
            raise ConfigError(f"spectrogram {f}x{t} not divisible by 2**depth={step}")
        if self.uses_wave:
            fb = self.filterbank
            if fb.rows != f:
                raise ConfigError(f"filterbank emits {fb.rows} rows but the spectrogram has {f} bins")
            if fb.target_frames != t:
                raise ConfigError(f"filterbank emits {fb.target_frames} frames, spectrogram has {t}")
            check_framing(fb, self.wave_len)

    @property
    def spec_shape(self):
        return self.stft.freq_bins, self.stft.frames(self.wave_len)

    @property
    def wave_len(self):
        return self.stft.samples_for(self.filterbank.target_frames)

    @property
    def uses_spec(self):
        return self.architecture in ("ynet", "unet_spec")

    @property
    def uses_wave(self):
        return self.architecture in ("ynet", "unet_wave")

    @property
    def branches(self):
        return [b for b, on in (("spec", self.uses_spec), ("wave", self.uses_wave)) if on]

    @property
    def predicts_mask(self):
        return self.architecture != "unet_wave"

    # -- flat key=value text, used by checkpoints and config files --------
    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("stft", "filterbank"):
                for k, sub in asdict(v).items():
                    out[f"{f.name}.{k}"] = sub
            else:
                out[f.name] = v
        return out

    def to_text(self):
        lines = []
        for k, v in self.to_dict().items():
            if isinstance(v, (tuple, list)):
                v = ",".join(str(x) for x in v)
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, items):
        top, stft_kw, fb_kw = {}, {}, {}
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in items.items():
            if key.startswith("stft."):
                stft_kw[key[5:]] = _parse_like(StftConfig, key[5:], raw)
            elif key.startswith("filterbank."):
                fb_kw[key[11:]] = _parse_like(FilterbankConfig, key[11:], raw)
            elif key in types:
                top[key] = _parse_like(cls, key, raw)
            else:
                raise ConfigError(f"unknown model config key {key!r}")
        return cls(stft=StftConfig(**stft_kw), filterbank=FilterbankConfig(**fb_kw), **top)

    @classmethod
    def from_text(cls, text):
        return cls.from_dict(parse_key_values(text))


def parse_key_values(text):
    items = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        items[k.strip()] = v.strip()
    return items


def _parse_like(cls, name, raw):
    if not isinstance(raw, str):
        return raw
    default = {f.name: f for f in fields(cls)}.get(name)
    if default is None:
        raise ConfigError(f"unknown config key {name!r} for {cls.__name__}")
    probe = default.default if default.default is not default.default_factory else None
    if isinstance(probe, bool):
        if raw.lower() not in ("true", "false", "1", "0"):
            raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
        return raw.lower() in ("true", "1")
    if isinstance(probe, int):
        return int(raw)
    if isinstance(probe, float):
        return float(raw)
    if isinstance(probe, tuple):
        return tuple(int(x) for x in raw.split(",") if x.strip())
    return raw


def miniature_config(architecture="ynet", base_channels=2, **overrides):
    """A 64 x 32 spectrogram / 1120-sample geometry for fast checks."""
    stft_cfg = StftConfig(window_len=128, hop=32, freq_bins=64)
    fb = FilterbankConfig(kernel_len=128, kernels_per_group=(32, 16, 8, 4, 4), stride=32,
                          target_frames=32)
    return ModelConfig(architecture=architecture, base_channels=base_channels, stft=stft_cfg,
                       filterbank=fb, **overrides)


# -- parameter layout ---------------------------------------------------------

def _conv(shapes, name, c_in, c_out, k=3):
    shapes[f"{name}.weight"] = (c_out, c_in, k, k)
    shapes[f"{name}.bias"] = (c_out,)


def _bn(shapes, name, c):
    shapes[f"{name}.gamma"] = (c,)
    shapes[f"{name}.beta"] = (c,)


def param_shapes(cfg):
    """Ordered mapping of every learnable tensor name to its shape."""
    shapes = {}
    b, depth = cfg.base_channels, cfg.depth
    if cfg.uses_wave:
        fb = cfg.filterbank
        for k, count in enumerate(fb.kernels_per_group):
            shapes[f"fb.g{k}.weight"] = (count, 1, fb.kernel_len)
            shapes[f"fb.g{k}.bias"] = (count,)
    for br in cfg.branches:
        _conv(shapes, f"{br}.stem", 1, b)
        for lvl in range(1, depth + 1):
            c_in, c_out = b * 2 ** (lvl - 1), b * 2 ** lvl
            _bn(shapes, f"{br}.enc{lvl}.bn", c_in)
            _conv(shapes, f"{br}.enc{lvl}.conv1", c_in, c_out)
            _conv(shapes, f"{br}.enc{lvl}.conv2", c_out, c_out)
    deep = b * 2 ** depth
    _conv(shapes, "core.conv1", deep * len(cfg.branches), deep)
    _conv(shapes, "core.conv2", deep, deep)
    _bn(shapes, "core.bn", deep)
    up = deep
    for lvl in range(depth, 0, -1):
        skip, out = b * 2 ** lvl, b * 2 ** (lvl - 1)
        _conv(shapes, f"dec{lvl}.conv1", up + skip * len(cfg.branches), out)
        _conv(shapes, f"dec{lvl}.conv2", out, out)
        _bn(shapes, f"dec{lvl}.bn", out)
        up = out
    _conv(shapes, "head", b, 1, k=1)
    return shapes


def batchnorm_layers(cfg):
    """Name prefix and channel count of every batchnorm layer."""
    return {name[:-len(".gamma")]: shape[0] for name, shape in param_shapes(cfg).items()
            if name.endswith(".gamma")}


def param_count(cfg):
    """Number of learnable scalars (kernels, biases, batchnorm affine)."""
    return int(sum(np.prod(s) for s in param_shapes(cfg).values()))


def init_params(cfg, rng, dtype=np.float32):
    params = {}
    fb_params = init_filterbank(cfg.filterbank, rng, dtype) if cfg.uses_wave else {}
    for name, shape in param_shapes(cfg).items():
        if name in fb_params:
            params[name] = fb_params[name]
            continue
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(1.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".gamma"):
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        params[name] = ag.Tensor(data.astype(dtype), requires_grad=True)
    return params


# -- network pieces -----------------------------------------------------------

def _conv_block(x, params, name, dilation=1):
    return ag.conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"], dilation=dilation)


def _act(x, branch, cfg):
    if branch == "wave":
        return ag.leaky_relu(x, cfg.leaky_slope)
    return ag.relu(x)


def encoder_layer(x, level, branch, params, stats, cfg, training, rng=None):
    """batchnorm -> conv -> act -> conv -> act -> (skip) -> maxpool -> dropout."""
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        raise ConfigError(f"encoder level {level} input {x.shape} has odd spatial dims")
    name = f"{branch}.enc{level}"
    dil = cfg.dilations[level - 1]
    h = ag.batchnorm2d(x, params[f"{name}.bn.gamma"], params[f"{name}.bn.beta"],
                       stats[f"{name}.bn"], training)
    h = _act(_conv_block(h, params, f"{name}.conv1", dil), branch, cfg)
    skip = _act(_conv_block(h, params, f"{name}.conv2", dil), branch, cfg)
    out = ag.dropout(ag.maxpool2d(skip), cfg.dropout, rng, training)
    return out, skip


def core(features, params, stats, cfg, training):
    """Merge the deepest features of every branch: concat -> conv -> relu -> conv -> bn -> relu."""
    first = features[0].shape
    for f in features[1:]:
        if f.shape != first:
            raise ConfigError(f"core: branch features disagree, {first} vs {f.shape}")
    h = ag.concat(features, axis=-3) if len(features) > 1 else features[0]
    h = ag.relu(_conv_block(h, params, "core.conv1"))
    h = _conv_block(h, params, "core.conv2")
    h = ag.batchnorm2d(h, params["core.bn.gamma"], params["core.bn.beta"], stats["core.bn"], training)
    return ag.relu(h)


def decoder_layer(x, skips, level, params, stats, cfg, training):
    """upsample -> concat(up, *skips) -> conv -> relu -> conv -> relu -> batchnorm."""
    up = ag.upsample2x(x)
    for s in skips:
        if s.shape[-2:] != up.shape[-2:]:
            raise ConfigError(f"decoder level {level}: skip {s.shape} vs upsampled {up.shape}")
    h = ag.concat([up, *skips], axis=-3)
    name = f"dec{level}"
    h = ag.relu(_conv_block(h, params, f"{name}.conv1"))
    h = ag.relu(_conv_block(h, params, f"{name}.conv2"))
    return ag.batchnorm2d(h, params[f"{name}.bn.gamma"], params[f"{name}.bn.beta"],
                          stats[f"{name}.bn"], training)


def _as_tensor(x, dtype):
    if isinstance(x, ag.Tensor):
        return x
    return ag.Tensor(np.asarray(x, dtype=dtype))


def forward(wave, mag, cfg, params, stats, training=False, rng=None):
    """Estimate a mask (or, for ``unet_wave``, a magnitude) from one batch.

    wave: ``N x n`` samples; mag: ``N x F x T`` mixture magnitude.
    Returns an ``N x F x T`` tensor.
    """
    dtype = next(iter(params.values())).dtype
    wave = _as_tensor(wave, dtype)
    mag = _as_tensor(mag, dtype)
    f, t = cfg.spec_shape
    if mag.ndim != 3 or mag.shape[1:] != (f, t):
        raise ConfigError(f"magnitude must be N x {f} x {t}, got {mag.shape}")
    n = mag.shape[0]
    if cfg.uses_wave and (wave.ndim != 2 or wave.shape != (n, cfg.wave_len)):
        raise ConfigError(f"waveform must be {n} x {cfg.wave_len}, got {wave.shape}")

    inputs = {}
    if cfg.uses_spec:
        spec_in = mag
        if cfg.log_mag:
            spec_in = ag.Tensor(np.log1p(mag.data))
        inputs["spec"] = spec_in.reshape(n, 1, f, t)
    if cfg.uses_wave:
        feat = learnable_spectrogram(wave.reshape(n, 1, cfg.wave_len), params, cfg.filterbank)
        inputs["wave"] = feat.reshape(n, 1, f, t)

    skips = {br: [] for br in cfg.branches}
    deep = []
    for br in cfg.branches:
        h = _conv_block(inputs[br], params, f"{br}.stem")
        for lvl in range(1, cfg.depth + 1):
            h, skip = encoder_layer(h, lvl, br, params, stats, cfg, training, rng)
            skips[br].append(skip)
        deep.append(h)

    h = core(deep, params, stats, cfg, training)
    for lvl in range(cfg.depth, 0, -1):
        h = decoder_layer(h, [skips[br][lvl - 1] for br in cfg.branches], lvl, params, stats, cfg,
                          training)
    h = ag.conv2d(h, params["head.weight"], params["head.bias"])
    if cfg.predicts_mask:
        h = ag.hardtanh(h, cfg.hardtanh_lo, cfg.hardtanh_hi)
    else:
        h = ag.relu(h)
    return h.reshape(n, f, t)


class SeparationNet:
    """Parameters, running batchnorm statistics and the dropout RNG of one model."""

    def __init__(self, cfg, seed=0, dtype=np.float32):
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.params = init_params(cfg, rng, dtype)
        self.stats = {name: ag.RunningStats(c) for name, c in batchnorm_layers(cfg).items()}
        self.dropout_rng = np.random.default_rng([seed, 1])
        self.step = 0

    def parameters(self):
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def to(self, dtype):
        for name, p in self.params.items():
            self.params[name] = ag.Tensor(p.data.astype(dtype), requires_grad=True)
        return self

    def __call__(self, wave, mag, training=False):
        return forward(wave, mag, self.cfg, self.params, self.stats, training, self.dropout_rng)

    def named_tensors(self):
        """Parameters followed by running stats, as float32 arrays, for persistence."""
        out = {name: p.data.astype(np.float32) for name, p in self.params.items()}
        for name, st in self.stats.items():
            out[f"{name}.running_mean"] = st.mean.astype(np.float32)
            out[f"{name}.running_var"] = st.var.astype(np.float32)
            out[f"{name}.tracked"] = np.array([st.tracked], dtype=np.float32)
        return out

    def expected_shapes(self):
        shapes = dict(param_shapes(self.cfg))
        for name, c in batchnorm_layers(self.cfg).items():
            shapes[f"{name}.running_mean"] = (c,)
            shapes[f"{name}.running_var"] = (c,)
            shapes[f"{name}.tracked"] = (1,)
        return shapes

    def load_tensors(self, tensors):
        for name in self.params:
            self.params[name] = ag.Tensor(np.array(tensors[name], dtype=np.float32), requires_grad=True)
        for name, st in self.stats.items():
            st.mean = np.array(tensors[f"{name}.running_mean"], dtype=np.float32)
            st.var = np.array(tensors[f"{name}.running_var"], dtype=np.float32)
            st.tracked = int(tensors[f"{name}.tracked"][0])

    def predict(self, wave, mag):
        """Eval-mode forward on numpy input, returning a numpy ``N x F x T`` array."""
        return self(wave, mag, training=False).data


def separate(mixture, model):
    """Separate the vocal from ``mixture`` with a trained model.

    The whole clip (zero-padded at the end to a multiple of 128 frames) is
    analysed once. The frame axis is then cut into model-sized blocks; block
    ``j`` covers exactly the model's waveform window starting at sample
    ``j * T * hop``, so consecutive windows overlap by ``window_len - hop``.
    Masked blocks share one overlap-add synthesis, which avoids seams between
    windows. Returns ``(vocal_clip, mask)`` with ``mask`` of shape
    ``F x (T * blocks)``.
    """
    cfg = model.cfg
    clip = mixture
    if clip.sample_rate != cfg.sample_rate:
        log.warning("resampling mixture from %d Hz to %d Hz", clip.sample_rate, cfg.sample_rate)
        clip = resample(clip, cfg.sample_rate)
    _, t = cfg.spec_shape
    hop = cfg.stft.hop
    x = clip.samples
    blocks = max(1, -(-max(cfg.stft.frames(x.size), 1) // t))
    padded = np.zeros(cfg.stft.samples_for(blocks * t))
    padded[:x.size] = x
    spec = stft(AudioClip(padded, cfg.sample_rate), cfg.stft)

    outs = []
    for j in range(blocks):
        start = j * t * hop
        window = padded[start:start + cfg.wave_len].astype(np.float32)[None]
        mag = spec.magnitude[:, j * t:(j + 1) * t].astype(np.float32)[None]
        outs.append(model.predict(window, mag)[0].astype(np.float64))
    out = np.concatenate(outs, axis=1)
    if cfg.predicts_mask:
        est = spec.apply_mask(out)
    else:
        est = ComplexSpectrogram(np.maximum(out, 0.0), spec.phase, spec.config,
                                 spec.original_length, spec.sample_rate)
    vocal = AudioClip(istft(est).samples[:x.size], cfg.sample_rate)
    if mixture.sample_rate != cfg.sample_rate:
        vocal = resample(vocal, mixture.sample_rate)
        vocal = AudioClip(vocal.samples[:len(mixture)], mixture.sample_rate)
    return vocal, out


def with_architecture(cfg, architecture):
    return replace(cfg, architecture=architecture)
