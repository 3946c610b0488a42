import logging

import numpy as np
import pytest

from ynet.audio import AudioClip, write_wav
from ynet.errors import ConfigError, TrainingDiverged, UsageError
from ynet.model import SeparationNet, miniature_config
from ynet.train import (ExamplePair, TrainConfig, _prepare, batch_loss, build_dataset, read_loss_log,
                        synth_dataset, synth_pair, train)

MINI = miniature_config("ynet", 2)


def mini_pairs(seed, n):
    return synth_dataset(seed, n, n=MINI.wave_len)


def test_synth_is_reproducible_and_window_sized():
    a = synth_dataset(4, 3)
    b = synth_dataset(4, 3)
    for p, q in zip(a, b):
        assert p.mixture.size == 67072
        assert p.mixture.tobytes() == q.mixture.tobytes()
        assert p.vocals.tobytes() == q.vocals.tobytes()
    assert not np.array_equal(a[0].mixture, synth_dataset(5, 1)[0].mixture)


def test_synth_ratio_and_peak():
    for i in range(10):
        pair, ratio = synth_pair(np.random.default_rng([0, i]))
        accomp = pair.mixture - pair.vocals
        measured = 10 * np.log10(np.mean(pair.vocals ** 2) / np.mean(accomp ** 2))
        assert -6.0 <= ratio <= 6.0
        assert abs(measured - ratio) < 0.01
        assert abs(np.max(np.abs(pair.mixture)) - 0.9) < 1e-6


def test_synth_needs_pairs():
    with pytest.raises(UsageError):
        synth_dataset(0, 0)


def _song(root, name, n_mix, n_voc=None, rate=44100):
    d = root / name
    d.mkdir(parents=True)
    rng = np.random.default_rng(len(name))
    write_wav(AudioClip(rng.uniform(-0.5, 0.5, n_mix), rate), d / "mixture.wav", "float32")
    write_wav(AudioClip(rng.uniform(-0.5, 0.5, n_voc or n_mix), rate), d / "vocals.wav", "float32")


def test_build_dataset_windows_and_order(tmp_path, caplog):
    _song(tmp_path, "b_song", 134144)
    _song(tmp_path, "a_song", 67072, 70000)
    (tmp_path / "c_song").mkdir()
    with caplog.at_level(logging.WARNING):
        pairs = build_dataset(tmp_path)
    assert [p.source for p in pairs] == ["a_song:0", "b_song:0", "b_song:1"]
    assert "truncating" in caplog.text
    assert "no mixture.wav" in caplog.text


def test_build_dataset_resamples_with_warning(tmp_path, caplog):
    _song(tmp_path, "s", 48000 * 2, rate=48000)
    with caplog.at_level(logging.WARNING):
        pairs = build_dataset(tmp_path)
    assert "resampling" in caplog.text
    assert len(pairs) == 1 and pairs[0].sample_rate == 44100


def test_build_dataset_missing_root(tmp_path):
    with pytest.raises(FileNotFoundError, match="nowhere"):
        build_dataset(tmp_path / "nowhere")


def test_train_config_text_round_trip_and_aliases():
    cfg = TrainConfig.from_text("epochs=3\nbatch=4\nlr=0.001\narch=unet-spec\nbase_channels=8\n")
    assert (cfg.epochs, cfg.batch, cfg.lr) == (3, 4, 1e-3)
    assert cfg.model.architecture == "unet_spec" and cfg.model.base_channels == 8
    again = TrainConfig.from_text(cfg.to_text())
    assert again == cfg
    with pytest.raises(ConfigError):
        TrainConfig(batch=0)
    with pytest.raises(ConfigError):
        TrainConfig.from_text("bogus=1\n")


def _mini_cfg(tmp_path=None, **kw):
    base = dict(epochs=2, batch=2, lr=1e-3, seed=1, model=MINI)
    if tmp_path is not None:
        base.update(checkpoint=str(tmp_path / "m.ckpt"), loss_log=str(tmp_path / "loss.csv"))
    base.update(kw)
    return TrainConfig(**base)


def test_training_is_deterministic_and_logs(tmp_path):
    pairs, val = mini_pairs(0, 5), mini_pairs(9, 2)
    r1 = train(_mini_cfg(tmp_path), pairs, val)
    rows = read_loss_log(tmp_path / "loss.csv")
    assert list(rows[0]) == ["epoch", "step", "train_loss", "val_loss"]
    assert len(rows) == 6  # 3 batches x 2 epochs
    assert [r["val_loss"] != "" for r in rows] == [False, False, True] * 2
    assert (tmp_path / "m.ckpt").exists()
    first = (tmp_path / "loss.csv").read_text()
    r2 = train(_mini_cfg(tmp_path), pairs, val)
    assert (tmp_path / "loss.csv").read_text() == first
    assert [r["train_loss"] for r in r1.log] == [r["train_loss"] for r in r2.log]


def test_unet_wave_trains_on_direct_magnitude():
    r = train(_mini_cfg(epochs=2, model=miniature_config("unet_wave", 2)), mini_pairs(0, 2))
    assert np.isfinite(r.final_train_loss)


def test_empty_dataset_is_a_usage_error():
    with pytest.raises(UsageError):
        train(_mini_cfg(), [], [])


def test_non_finite_loss_aborts_naming_the_batch():
    pairs = mini_pairs(0, 2)
    pairs[1] = ExamplePair(np.full_like(pairs[1].mixture, np.nan), pairs[1].vocals, "poisoned:0")
    with pytest.raises(TrainingDiverged, match="poisoned"):
        train(_mini_cfg(batch=1), pairs)


def test_batch_gradient_is_mean_of_example_gradients():
    # eval-mode forward so batch statistics do not couple the examples
    data = _prepare(mini_pairs(3, 2), MINI)
    net = SeparationNet(MINI, seed=0).to(np.float64)
    net(data.wave, data.mix_mag, training=True)  # populate running stats

    def grads(idx):
        net.zero_grad()
        batch_loss(net, data, np.array(idx), training=False).backward()
        return {k: p.grad.copy() for k, p in net.params.items()}

    both, one, two = grads([0, 1]), grads([0]), grads([1])
    for k in both:
        np.testing.assert_allclose(both[k], 0.5 * (one[k] + two[k]), rtol=1e-9, atol=1e-12)
