"""A small dense tensor type with reverse-mode differentiation.

Only the operations the separation network needs are provided. Every op
takes and returns :class:`Tensor`; the numpy array lives in ``.data`` and the
accumulated gradient in ``.grad``. Arrays keep whatever float dtype they were
created with, so a float64 graph can be built for gradient checking simply by
feeding float64 leaves.

2-D image ops accept ``C x H x W`` or ``N x C x H x W`` input; 1-D
convolution accepts ``C x L`` or ``N x C x L``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ConfigError, UsageError

DEFAULT_DTYPE = np.float32

# When a list, piecewise-linear ops append a digest of their branch decisions
# (active masks, argmax positions). Gradient checks use it to tell whether a
# finite-difference step crossed a kink.
_pattern_log = None


class record_patterns:
    """Context manager collecting branch-decision digests of every op run inside it."""

    def __enter__(self):
        global _pattern_log
        self._saved = _pattern_log
        _pattern_log = self.log = []
        return self.log

    def __exit__(self, *exc):
        global _pattern_log
        _pattern_log = self._saved
        return False


def _note_pattern(arr):
    if _pattern_log is not None:
        _pattern_log.append(hash(np.ascontiguousarray(arr).tobytes()))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, dtype=None, _parents=(), op=""):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = None
        self.op = op

    # -- basic protocol -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Accumulate d(self)/d(leaf) into every requires-grad leaf.

        Leaf gradients add up across calls; intermediate gradients are
        rebuilt from scratch each time and released once consumed.
        """
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise UsageError("loss does not depend on any tensor that requires grad")
        order = _topo_order(self)
        for node in order:
            if not node.is_leaf:
                node.grad = None
        if self.is_leaf:
            self._accumulate(np.ones_like(self.data))
            return
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node.is_leaf or node.grad is None:
                continue
            node._backward(node.grad)
            node.grad = None

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _lift(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data, parents, backward, op):
    parents = tuple(parents)
    out = Tensor(data, dtype=data.dtype, op=op)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise arithmetic ---------------------------------------------

def add(a, b):
    a = _lift(a)
    b = _lift(b, a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a = _lift(a)
    b = _lift(b, a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a = _lift(a)
    b = _lift(b, a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward, "mul")


def tsum(a):
    def backward(g):
        a._accumulate(np.broadcast_to(g, a.shape))

    return _result(np.asarray(a.data.sum(), dtype=a.dtype), (a,), backward, "sum")


def tmean(a):
    n = a.data.size

    def backward(g):
        a._accumulate(np.broadcast_to(g / n, a.shape))

    return _result(np.asarray(a.data.mean(), dtype=a.dtype), (a,), backward, "mean")


def reshape(a, shape):
    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _result(a.data.reshape(shape), (a,), backward, "reshape")


def getitem(a, index):
    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        a._accumulate(full)

    return _result(np.array(a.data[index]), (a,), backward, "getitem")


def concat(inputs, axis=0):
    """Join tensors along ``axis``; every other extent must agree."""
    inputs = [_lift(t) for t in inputs]
    if not inputs:
        raise ConfigError("concat needs at least one tensor")
    ref = inputs[0].shape
    ax = axis % len(ref)
    for t in inputs[1:]:
        if t.ndim != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != ax
        ):
            raise ConfigError(f"concat extent mismatch: {ref} vs {t.shape} on axis {axis}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in inputs])

    def backward(g):
        for t, lo, hi in zip(inputs, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    data = np.concatenate([t.data for t in inputs], axis=ax)
    return _result(data, inputs, backward, "concat")


# -- activations ----------------------------------------------------------

def activation(x, kind, slope=0.01, lo=-1.0, hi=1.0):
    """relu, leaky_relu or hardtanh.

    Derivatives at the kinks are taken from the flat/negative side: relu'(0)
    is 0, leaky_relu'(0) is ``slope``, hardtanh'(lo) = hardtanh'(hi) = 0.
    """
    d = x.data
    if kind == "relu":
        out = np.maximum(d, 0)
        local = (d > 0).astype(d.dtype)
    elif kind == "leaky_relu":
        pos = d > 0
        out = np.where(pos, d, d * slope).astype(d.dtype, copy=False)
        local = np.where(pos, 1.0, slope).astype(d.dtype)
    elif kind == "hardtanh":
        if not lo < hi:
            raise ConfigError(f"hardtanh needs lo < hi, got {lo}, {hi}")
        out = np.clip(d, lo, hi)
        local = ((d > lo) & (d < hi)).astype(d.dtype)
    else:
        raise ConfigError(f"unknown activation {kind!r}")
    _note_pattern(local)

    def backward(g):
        x._accumulate(g * local)

    return _result(out, (x,), backward, kind)


def relu(x):
    return activation(x, "relu")


def leaky_relu(x, slope=0.01):
    return activation(x, "leaky_relu", slope=slope)


def hardtanh(x, lo=-1.0, hi=1.0):
    return activation(x, "hardtanh", lo=lo, hi=hi)


def dropout(x, rate, rng, training):
    """Inverted dropout; identity when not training or ``rate == 0``."""
    if not training or rate <= 0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)

    def backward(g):
        x._accumulate(g * keep)

    return _result(x.data * keep, (x,), backward, "dropout")


# -- losses ---------------------------------------------------------------

def mse(a, b):
    a = _lift(a)
    b = _lift(b, a)
    if a.shape != b.shape:
        raise ConfigError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * 2.0 * diff / n)
        if b.requires_grad:
            b._accumulate(-g * 2.0 * diff / n)

    return _result(np.asarray(np.mean(diff * diff), dtype=a.dtype), (a, b), backward, "mse")


# -- convolutions -----------------------------------------------------------

def conv1d(x, w, b=None, stride=1, dilation=1, pad_left=0, pad_right=0):
    """Strided, dilated 1-D cross-correlation with zero padding.

    x: ``C_in x L`` or ``N x C_in x L``; w: ``C_out x C_in x k``; b: ``C_out``.
    """
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or w.ndim != 3:
        raise ConfigError(f"conv1d expects (N,)C,L input and O,C,k kernels, got {x.shape}, {w.shape}")
    n, c, length = xd.shape
    o, cw, k = w.shape
    if cw != c:
        raise ConfigError(f"conv1d kernels expect {cw} input channels, input has {c}")
    if b is not None and b.shape != (o,):
        raise ConfigError(f"conv1d bias shape {b.shape} does not match {o} output channels")
    span = (k - 1) * dilation + 1
    padded_len = length + pad_left + pad_right
    if padded_len < span:
        raise ConfigError(f"conv1d: padded length {padded_len} shorter than kernel span {span}")
    frames = (padded_len - span) // stride + 1

    xp = np.zeros((n, c, padded_len), dtype=xd.dtype)
    xp[:, :, pad_left:pad_left + length] = xd
    s0, s1, s2 = xp.strides
    view = as_strided(xp, shape=(n, frames, c, k), strides=(s0, stride * s2, s1, dilation * s2),
                      writeable=False)
    cols = np.ascontiguousarray(view.reshape(n * frames, c * k))
    w2 = w.data.reshape(o, c * k)
    out = (cols @ w2.T).reshape(n, frames, o).transpose(0, 2, 1)
    if b is not None:
        out = out + b.data[None, :, None]
    out = np.ascontiguousarray(out)
    if squeeze:
        out = out[0]

    def backward(g):
        g3 = g[None] if squeeze else g
        g2 = g3.transpose(0, 2, 1).reshape(n * frames, o)
        if w.requires_grad:
            w._accumulate((g2.T @ cols).reshape(w.shape))
        if b is not None and b.requires_grad:
            b._accumulate(g3.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = (g2 @ w2).reshape(n, frames, c, k)
            gp = np.zeros_like(xp)
            if frames <= k:
                for t in range(frames):
                    start = t * stride
                    gp[:, :, start:start + span:dilation] += dcols[:, t]
            else:
                stop = (frames - 1) * stride + 1
                for j in range(k):
                    start = j * dilation
                    gp[:, :, start:start + stop:stride] += dcols[:, :, :, j].transpose(0, 2, 1)
            gx = gp[:, :, pad_left:pad_left + length]
            x._accumulate(gx[0] if squeeze else gx)

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, backward, "conv1d")


def _as4d(x):
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise ConfigError(f"expected C,H,W or N,C,H,W input, got shape {x.shape}")


def conv2d(x, w, b=None, dilation=1):
    """Same-padded 2-D cross-correlation with an odd square kernel."""
    xd, squeeze = _as4d(x)
    n, c, h, wd = xd.shape
    o, cw, kh, kw = w.shape
    if cw != c:
        raise ConfigError(f"conv2d kernels expect {cw} input channels, input has {c}")
    if kh != kw or kh % 2 != 1:
        raise ConfigError(f"conv2d needs an odd square kernel, got {kh}x{kw}")
    if b is not None and b.shape != (o,):
        raise ConfigError(f"conv2d bias shape {b.shape} does not match {o} output channels")
    k = kh
    pad = dilation * (k // 2)
    if pad:
        xp = np.zeros((c, n, h + 2 * pad, wd + 2 * pad), dtype=xd.dtype)
        xp[:, :, pad:pad + h, pad:pad + wd] = xd.transpose(1, 0, 2, 3)
    else:
        xp = xd.transpose(1, 0, 2, 3)
    cols = np.empty((c, k * k, n, h, wd), dtype=xd.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i * k + j] = xp[:, :, i * dilation:i * dilation + h, j * dilation:j * dilation + wd]
    cols = cols.reshape(c * k * k, n * h * wd)
    w2 = w.data.reshape(o, c * k * k)
    out = w2 @ cols
    if b is not None:
        out += b.data[:, None]
    out = np.ascontiguousarray(out.reshape(o, n, h, wd).transpose(1, 0, 2, 3))
    if squeeze:
        out = out[0]

    def backward(g):
        g4 = g[None] if squeeze else g
        g2 = g4.transpose(1, 0, 2, 3).reshape(o, n * h * wd)
        if w.requires_grad:
            w._accumulate((g2 @ cols.T).reshape(w.shape))
        if b is not None and b.requires_grad:
            b._accumulate(g2.sum(axis=1))
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(c, k * k, n, h, wd)
            gp = np.zeros((c, n, h + 2 * pad, wd + 2 * pad), dtype=xd.dtype)
            for i in range(k):
                for j in range(k):
                    gp[:, :, i * dilation:i * dilation + h, j * dilation:j * dilation + wd] += dcols[:, i * k + j]
            gx = gp[:, :, pad:pad + h, pad:pad + wd].transpose(1, 0, 2, 3)
            x._accumulate(gx[0] if squeeze else gx)

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, backward, "conv2d")


def maxpool2d(x):
    """2x2 non-overlapping max; ties go to the first element in row-major order."""
    xd, squeeze = _as4d(x)
    n, c, h, wd = xd.shape
    if h % 2 or wd % 2:
        raise ConfigError(f"maxpool2d needs even spatial dims, got {h}x{wd}")
    win = xd.reshape(n, c, h // 2, 2, wd // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, wd // 2, 4)
    idx = win.argmax(axis=-1)
    _note_pattern(idx)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    if squeeze:
        out = out[0]

    def backward(g):
        g4 = g[None] if squeeze else g
        gw = np.zeros((n, c, h // 2, wd // 2, 4), dtype=xd.dtype)
        np.put_along_axis(gw, idx[..., None], g4[..., None], axis=-1)
        gx = gw.reshape(n, c, h // 2, wd // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, wd)
        x._accumulate(gx[0] if squeeze else gx)

    return _result(out, (x,), backward, "maxpool2d")


def upsample2x(x):
    """Nearest-neighbour upsampling: every element becomes a 2x2 block."""
    xd, squeeze = _as4d(x)
    n, c, h, wd = xd.shape
    out = xd.repeat(2, axis=2).repeat(2, axis=3)
    if squeeze:
        out = out[0]

    def backward(g):
        g4 = g[None] if squeeze else g
        gx = g4.reshape(n, c, h, 2, wd, 2).sum(axis=(3, 5))
        x._accumulate(gx[0] if squeeze else gx)

    return _result(out, (x,), backward, "upsample2x")


# -- batch normalisation ------------------------------------------------------

@dataclass
class RunningStats:
    """Per-channel running mean/variance for one batchnorm layer."""

    channels: int
    momentum: float = 0.1
    mean: np.ndarray = field(default=None)
    var: np.ndarray = field(default=None)
    tracked: int = 0

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.channels, dtype=DEFAULT_DTYPE)
        if self.var is None:
            self.var = np.ones(self.channels, dtype=DEFAULT_DTYPE)


BN_EPS = 1e-5


def batchnorm2d(x, gamma, beta, stats, training):
    """Per-channel normalisation over the batch and both spatial axes.

    Training mode normalises with the biased batch variance and folds the
    batch moments into ``stats`` (the unbiased variance, momentum 0.1).
    Eval mode uses ``stats``; if none were ever recorded it warns and uses
    mean 0 / variance 1.
    """
    xd, squeeze = _as4d(x)
    n, c, h, wd = xd.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ConfigError(f"batchnorm affine shapes {gamma.shape}/{beta.shape} do not match {c} channels")
    m = n * h * wd
    shape = (1, c, 1, 1)
    if training:
        if m < 2:
            raise ConfigError("batchnorm2d in train mode needs at least 2 values per channel")
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        if stats is not None:
            mom = stats.momentum
            stats.mean = ((1 - mom) * stats.mean + mom * mu).astype(stats.mean.dtype)
            stats.var = ((1 - mom) * stats.var + mom * var * m / (m - 1)).astype(stats.var.dtype)
            stats.tracked += 1
    else:
        if stats is None or stats.tracked == 0:
            warnings.warn("batchnorm2d in eval mode without running stats; using mean 0, var 1",
                          RuntimeWarning, stacklevel=2)
            mu = np.zeros(c, dtype=xd.dtype)
            var = np.ones(c, dtype=xd.dtype)
        else:
            mu = stats.mean.astype(xd.dtype)
            var = stats.var.astype(xd.dtype)
    inv_std = (1.0 / np.sqrt(var + BN_EPS)).astype(xd.dtype)
    xhat = (xd - mu.reshape(shape)) * inv_std.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)
    if squeeze:
        out = out[0]

    def backward(g):
        g4 = g[None] if squeeze else g
        if gamma.requires_grad:
            gamma._accumulate((g4 * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta._accumulate(g4.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = g4 * gamma.data.reshape(shape)
            if training:
                s1 = dxhat.sum(axis=(0, 2, 3)).reshape(shape)
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(shape)
                gx = (inv_std.reshape(shape) / m) * (m * dxhat - s1 - xhat * s2)
            else:
                gx = dxhat * inv_std.reshape(shape)
            x._accumulate(gx[0] if squeeze else gx)

    return _result(out.astype(xd.dtype, copy=False), (x, gamma, beta), backward, "batchnorm2d")
