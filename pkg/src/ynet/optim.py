"""Adam optimiser over lists of :class:`~ynet.autograd.Tensor` parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, state):
    """One bias-corrected Adam update, in place.

    Moment buffers are created lazily on the first call, matching the order
    of ``params``; the same list must be passed every time.
    """
    for i, p in enumerate(params):
        if p.grad is None:
            raise UsageError(f"parameter {i} {p.shape} has no gradient; call backward() first")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    elif len(state.m) != len(params):
        raise UsageError("adam_step called with a different parameter list")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / corr1
        vhat = v / corr2
        p.data -= (state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.data.dtype, copy=False)
