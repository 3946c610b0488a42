import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ynet.audio import AudioClip, resample, write_wav
from ynet.errors import UsageError
from ynet.metrics import evaluate_pairs, sdr, si_snr, stoi, third_octave_matrix


def speechy(seed=0, rate=16000, seconds=2.0):
    """Voiced syllables: a gliding harmonic tone under raised-cosine bursts with a -20 dB floor."""
    rng = np.random.default_rng(seed)
    t = np.arange(int(rate * seconds)) / rate
    f0 = rng.uniform(100, 220) * (1 + 0.2 * np.sin(2 * np.pi * 0.7 * t))
    phase = 2 * np.pi * np.cumsum(f0) / rate
    x = sum(np.sin(k * phase) / k for k in range(1, 15))
    env = np.zeros_like(t)
    pos = 0
    while pos < t.size:
        length = int(rng.uniform(0.1, 0.3) * rate)
        seg = np.hanning(length)[:t.size - pos]
        env[pos:pos + seg.size] = seg
        pos += length + int(rng.uniform(0.03, 0.1) * rate)
    return AudioClip(x * (0.1 + 0.9 * env), rate)


def clip(x, rate=8000):
    return AudioClip(np.asarray(x, dtype=np.float64), rate)


def test_self_evaluation_hits_the_cap():
    s = speechy()
    assert sdr(s, s) == 100.0
    assert si_snr(s, s) == 100.0


def test_sdr_of_orthogonal_noise_at_20db():
    rng = np.random.default_rng(0)
    s = rng.standard_normal(8000)
    s -= s.mean()
    n = rng.standard_normal(8000)
    n -= n.mean()
    n -= n @ s / (s @ s) * s
    n *= np.sqrt((s @ s) / 100 / (n @ n))
    assert abs(sdr(clip(s), clip(s + n)) - 20.0) < 0.01


def test_sdr_of_negated_reference():
    s = clip(np.random.default_rng(1).standard_normal(4000))
    assert abs(sdr(s, clip(-s.samples)) - 10 * np.log10(0.25)) < 1e-9


def test_si_snr_scale_invariance_and_orthogonal_floor():
    rng = np.random.default_rng(2)
    s = rng.standard_normal(4000)
    e = s + 0.3 * rng.standard_normal(4000)
    base = si_snr(clip(s), clip(e))
    for a in (0.1, 1.0, 10.0, 3.7):
        assert abs(si_snr(clip(s), clip(a * e)) - base) < 1e-6
    assert si_snr(clip(s), clip(3.7 * s)) == 100.0
    o = rng.standard_normal(4000)
    o -= o.mean()
    sc = s - s.mean()
    o -= o @ sc / (sc @ sc) * sc
    assert si_snr(clip(s), clip(o)) == -100.0


def _scaled_plus_orthogonal(a, seed):
    rng = np.random.default_rng(seed)
    s = rng.standard_normal(2000)
    s -= s.mean()
    e = rng.standard_normal(2000)
    e -= e.mean()
    e -= e @ s / (s @ s) * s
    return clip(s), clip(a * s + 0.2 * e)


@given(st.floats(1.0, 20.0), st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_scaling_up_only_hurts_plain_sdr(a, seed):
    s, est = _scaled_plus_orthogonal(a, seed)
    assert sdr(s, est) <= si_snr(s, est) + 1e-6


@given(st.floats(0.05, 20.0), st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_sdr_never_beats_the_best_rescaled_estimate(a, seed):
    # the best gain c gives sdr(s, c*est) = 10 log10(1 + 10**(si_snr / 10))
    s, est = _scaled_plus_orthogonal(a, seed)
    assert sdr(s, est) <= 10 * np.log10(1 + 10 ** (si_snr(s, est) / 10)) + 1e-6


def test_errors():
    with pytest.raises(UsageError):
        sdr(clip(np.zeros(10)), clip(np.ones(10)))
    with pytest.raises(UsageError):
        si_snr(clip(np.ones(10)), clip(np.ones(11)))
    with pytest.raises(UsageError):
        sdr(AudioClip(np.ones(10), 8000), AudioClip(np.ones(10), 16000))


def test_stoi_reference_values():
    s = speechy()
    assert stoi(s, s) >= 0.999
    assert stoi(s, AudioClip(0.5 * s.samples, s.sample_rate)) >= 0.99
    for seed in range(3):
        n = AudioClip(np.random.default_rng(seed + 10).standard_normal(len(s)), s.sample_rate)
        assert stoi(s, n) < 0.2


def test_stoi_rate_symmetry():
    s = speechy(rate=44100)
    y = AudioClip(s.samples + 0.5 * np.random.default_rng(4).standard_normal(len(s)), 44100)
    direct = stoi(s, y)
    pre = stoi(resample(s, 10000), resample(y, 10000))
    assert abs(direct - pre) < 1e-3


def test_stoi_too_short_names_the_minimum():
    s = speechy(seconds=0.2)
    with pytest.raises(UsageError, match="ms"):
        stoi(s, s)


def test_third_octave_bands_cover_expected_bins():
    obm = third_octave_matrix()
    assert obm.shape == (15, 257)
    assert (obm.sum(axis=0) <= 1).all()
    assert obm[0].argmax() == 7  # first band starts near 150 * 2**(-1/6) Hz


def test_stoi_matches_pystoi():
    pystoi = pytest.importorskip("pystoi")
    rng = np.random.default_rng(7)
    s = speechy(rate=10000, seconds=3.0)
    for level in (0.1, 0.5, 2.0):
        y = s.samples + level * rng.standard_normal(len(s))
        ours = stoi(s, AudioClip(y, 10000))
        ref = pystoi.stoi(s.samples, y, 10000)
        assert abs(ours - ref) < 1e-6


def _write(d, name, x, rate=16000):
    d.mkdir(parents=True, exist_ok=True)
    write_wav(AudioClip(x, rate), d / name, "float32")


def test_evaluate_pairs_identical_dirs(tmp_path):
    s = speechy().samples.astype(np.float32)
    _write(tmp_path / "ref", "a.wav", s)
    _write(tmp_path / "est", "a.wav", s)
    report = evaluate_pairs(tmp_path / "ref", tmp_path / "est")
    row = report.rows[0]
    assert (row.clip, row.sdr_db, row.si_snr_db) == ("a.wav", 100.0, 100.0)
    assert row.stoi > 0.999


def test_evaluate_pairs_aggregates_and_missing(tmp_path):
    rng = np.random.default_rng(0)
    for name, seed in (("a.wav", 1), ("b.wav", 2)):
        s = speechy(seed).samples
        _write(tmp_path / "ref", name, s)
        _write(tmp_path / "est", name, s + 0.3 * rng.standard_normal(s.size))
    _write(tmp_path / "ref", "lonely.wav", speechy(3).samples)
    report = evaluate_pairs(tmp_path / "ref", tmp_path / "est")
    assert [r.clip for r in report.rows] == ["a.wav", "b.wav"]
    assert report.missing == ["lonely.wav"]
    vals = [r.sdr_db for r in report.rows]
    assert report.mean()["sdr_db"] == pytest.approx(np.mean(vals))
    assert report.median()["sdr_db"] == pytest.approx(np.median(vals))
    out = tmp_path / "r.csv"
    report.write_csv(out)
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["clip", "sdr_db", "si_snr_db", "stoi"]
    assert [r[0] for r in rows[1:]] == ["a.wav", "b.wav", "mean", "median"]


def test_evaluate_empty_dirs(tmp_path):
    (tmp_path / "r").mkdir()
    (tmp_path / "e").mkdir()
    report = evaluate_pairs(tmp_path / "r", tmp_path / "e")
    assert report.rows == [] and report.mean() == {}
