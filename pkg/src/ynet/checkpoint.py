"""Binary checkpoint files.

Layout, all integers little-endian::

    b"YNET"
    u32  version (1)
    u32  config length, then that many bytes of UTF-8 key=value text
    u32  tensor count
    per tensor:
        u16  name length, UTF-8 name
        u8   rank
        u64  dims[rank]
        f32  data, row-major
    u64  step count

Writes go to a temporary file in the same directory that is then renamed
over the target, so readers never see a half-written checkpoint.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError
from .model import ModelConfig, SeparationNet

MAGIC = b"YNET"
VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    tensors: dict
    step: int = 0

    @classmethod
    def from_model(cls, net):
        return cls(net.cfg, net.named_tensors(), net.step)

    def to_model(self):
        """Build a :class:`SeparationNet` holding these weights, checking names and shapes."""
        try:
            net = SeparationNet(self.config)
        except ConfigError as exc:
            raise FormatError(f"config: {exc}") from exc
        expected = net.expected_shapes()
        for name, arr in self.tensors.items():
            if name not in expected:
                raise FormatError(f"tensor {name!r}: not part of a {self.config.architecture} model")
            if tuple(arr.shape) != tuple(expected[name]):
                raise FormatError(f"tensor {name!r}: shape {tuple(arr.shape)} != expected {tuple(expected[name])}")
        absent = [n for n in expected if n not in self.tensors]
        if absent:
            raise FormatError(f"tensor {absent[0]!r}: missing from checkpoint ({len(absent)} missing)")
        net.load_tensors(self.tensors)
        net.step = self.step
        return net


def to_bytes(ckpt):
    cfg = ckpt.config.to_text().encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg, struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}Q", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    parts.append(struct.pack("<Q", int(ckpt.step)))
    return b"".join(parts)


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise FormatError(f"{what}: file truncated at byte {len(self.blob)}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def from_bytes(blob):
    r = _Reader(blob)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("magic: not a ynet checkpoint")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"version: unsupported checkpoint version {version}")
    (cfg_len,) = r.unpack("<I", "config length")
    try:
        config = ModelConfig.from_text(r.take(cfg_len, "config").decode("utf-8"))
    except (UnicodeDecodeError, ConfigError, ValueError) as exc:
        raise FormatError(f"config: {exc}") from exc
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for i in range(count):
        (name_len,) = r.unpack("<H", f"tensor {i} name length")
        try:
            name = r.take(name_len, f"tensor {i} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"tensor {i} name: {exc}") from exc
        (rank,) = r.unpack("<B", f"tensor {name!r} rank")
        dims = r.unpack(f"<{rank}Q", f"tensor {name!r} dims")
        size = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(r.take(4 * size, f"tensor {name!r} data"), dtype="<f4")
        tensors[name] = data.reshape(dims).astype(np.float32)
    (step,) = r.unpack("<Q", "step count")
    if r.pos != len(blob):
        raise FormatError(f"trailer: {len(blob) - r.pos} unexpected bytes after step count")
    return Checkpoint(config, tensors, step)


def save_checkpoint(ckpt, path):
    if isinstance(ckpt, SeparationNet):
        ckpt = Checkpoint.from_model(ckpt)
    blob = to_bytes(ckpt)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".ckpt-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def load_model(path):
    """Read a checkpoint and rebuild the model, validating every tensor."""
    return load_checkpoint(path).to_model()
