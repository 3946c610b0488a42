"""Learnable spectrogram front end.

Raw audio goes through five groups of strided 1-D convolutions, one group per
dilation rate. Each group is padded symmetrically by ``(kernel_len-1)*(d-1)``
samples so that every group emits the same number of frames as the STFT, and
the groups are stacked along the row axis (dilation 1 on top). The result has
the same shape as the magnitude spectrogram it is paired with.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import ConfigError


@dataclass(frozen=True)
class FilterbankConfig:
    kernel_len: int = 2048
    dilation_rates: tuple = (1, 2, 4, 8, 16)
    kernels_per_group: tuple = (512, 256, 128, 64, 64)
    stride: int = 512
    target_frames: int = 128
    leaky_slope: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "dilation_rates", tuple(int(d) for d in self.dilation_rates))
        object.__setattr__(self, "kernels_per_group", tuple(int(k) for k in self.kernels_per_group))
        if len(self.dilation_rates) != len(self.kernels_per_group):
            raise ConfigError("dilation_rates and kernels_per_group must have the same length")
        if any(b > a for a, b in zip(self.kernels_per_group, self.kernels_per_group[1:])):
            raise ConfigError(f"kernels_per_group must be non-increasing, got {self.kernels_per_group}")
        if min(self.kernels_per_group, default=0) < 1 or min(self.dilation_rates, default=0) < 1:
            raise ConfigError("kernel counts and dilation rates must be positive")

    @property
    def rows(self):
        return sum(self.kernels_per_group)

    def input_length(self):
        """Waveform length that frames to ``target_frames`` at dilation 1."""
        return (self.target_frames - 1) * self.stride + self.kernel_len

    def padding(self, dilation):
        total = (self.kernel_len - 1) * (dilation - 1)
        return total // 2, total - total // 2

    def frames(self, n, dilation):
        left, right = self.padding(dilation)
        span = (self.kernel_len - 1) * dilation + 1
        return (n + left + right - span) // self.stride + 1


def init_params(cfg, rng, dtype=np.float32):
    """Kernels uniform in +-sqrt(1/fan_in), zero biases; names ``fb.g<k>.*``."""
    bound = np.sqrt(1.0 / cfg.kernel_len)
    params = {}
    for k, count in enumerate(cfg.kernels_per_group):
        w = rng.uniform(-bound, bound, size=(count, 1, cfg.kernel_len)).astype(dtype)
        params[f"fb.g{k}.weight"] = ag.Tensor(w, requires_grad=True)
        params[f"fb.g{k}.bias"] = ag.Tensor(np.zeros(count, dtype=dtype), requires_grad=True)
    return params


def check_framing(cfg, n):
    for k, d in enumerate(cfg.dilation_rates):
        got = cfg.frames(n, d)
        if got != cfg.target_frames:
            raise ConfigError(
                f"filterbank group {k} (dilation {d}) yields {got} frames for {n} samples, "
                f"expected {cfg.target_frames}"
            )


def learnable_spectrogram(wave, params, cfg):
    """Map ``wave`` (``1 x n`` or ``N x 1 x n``) to ``rows x frames`` features.

    Returns ``rows x target_frames`` for unbatched input and
    ``N x rows x target_frames`` for batched input.
    """
    n = wave.shape[-1]
    check_framing(cfg, n)
    groups = []
    for k, d in enumerate(cfg.dilation_rates):
        left, right = cfg.padding(d)
        y = ag.conv1d(wave, params[f"fb.g{k}.weight"], params[f"fb.g{k}.bias"],
                      stride=cfg.stride, dilation=d, pad_left=left, pad_right=right)
        groups.append(ag.leaky_relu(y, cfg.leaky_slope))
    return ag.concat(groups, axis=-2)
