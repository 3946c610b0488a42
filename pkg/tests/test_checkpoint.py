import struct

import numpy as np
import pytest

from ynet.checkpoint import (MAGIC, Checkpoint, from_bytes, load_checkpoint, load_model, save_checkpoint,
                             to_bytes)
from ynet.errors import FormatError
from ynet.model import ModelConfig, SeparationNet, miniature_config


@pytest.fixture
def net():
    n = SeparationNet(miniature_config("ynet", 2), seed=3)
    rng = np.random.default_rng(0)
    n(rng.standard_normal((2, n.cfg.wave_len)), np.abs(rng.standard_normal((2, *n.cfg.spec_shape))),
      training=True)
    n.step = 17
    return n


def test_round_trip_is_bitwise(tmp_path, net):
    path = tmp_path / "m.ckpt"
    save_checkpoint(net, path)
    ck = load_checkpoint(path)
    assert ck.config == net.cfg
    assert ck.step == 17
    ref = net.named_tensors()
    assert list(ck.tensors) == list(ref)
    for k, v in ref.items():
        assert ck.tensors[k].tobytes() == v.tobytes()
    assert to_bytes(ck) == path.read_bytes()


def test_loaded_model_predicts_identically(tmp_path, net):
    save_checkpoint(net, tmp_path / "m.ckpt")
    back = load_model(tmp_path / "m.ckpt")
    rng = np.random.default_rng(1)
    w, m = rng.standard_normal((1, net.cfg.wave_len)), np.abs(rng.standard_normal((1, *net.cfg.spec_shape)))
    np.testing.assert_array_equal(back.predict(w, m), net.predict(w, m))


def test_header_layout(net):
    blob = to_bytes(Checkpoint.from_model(net))
    assert blob[:4] == MAGIC
    version, cfg_len = struct.unpack("<II", blob[4:12])
    assert version == 1
    assert blob[12:12 + cfg_len].decode().startswith("architecture=ynet")
    (count,) = struct.unpack("<I", blob[12 + cfg_len:16 + cfg_len])
    assert count == len(net.named_tensors())
    assert struct.unpack("<Q", blob[-8:])[0] == 17


@pytest.mark.parametrize("offset, field", [(0, "magic"), (4, "version")])
def test_corrupt_header_byte_is_rejected(net, offset, field):
    blob = bytearray(to_bytes(Checkpoint.from_model(net)))
    blob[offset] ^= 0xFF
    with pytest.raises(FormatError, match=field):
        from_bytes(bytes(blob))


@pytest.mark.parametrize("cut", [10, 200, 5000, 9])
def test_truncation_is_rejected(net, cut):
    blob = to_bytes(Checkpoint.from_model(net))
    with pytest.raises(FormatError, match="truncated"):
        from_bytes(blob[:-cut])


def test_trailing_garbage_is_rejected(net):
    with pytest.raises(FormatError):
        from_bytes(to_bytes(Checkpoint.from_model(net)) + b"\0")


def test_architecture_mismatch_is_rejected(net):
    ck = Checkpoint.from_model(SeparationNet(miniature_config("unet_spec", 2)))
    ck.config = miniature_config("ynet", 2)
    with pytest.raises(FormatError, match="tensor"):
        from_bytes(to_bytes(ck)).to_model()


def test_shape_mismatch_is_rejected(net):
    ck = Checkpoint.from_model(net)
    ck.tensors["head.bias"] = np.zeros(3, dtype=np.float32)
    with pytest.raises(FormatError, match="head.bias"):
        from_bytes(to_bytes(ck)).to_model()


def test_failed_save_leaves_old_file(tmp_path, net):
    path = tmp_path / "m.ckpt"
    save_checkpoint(net, path)
    before = path.read_bytes()
    bad = Checkpoint(ModelConfig(), {"x": object()}, 0)
    with pytest.raises(Exception):
        save_checkpoint(bad, path)
    assert path.read_bytes() == before
    assert [p.name for p in tmp_path.iterdir()] == ["m.ckpt"]
