import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.io import wavfile

from ynet.audio import WINDOW_LEN, AudioClip, read_wav, resample, slice_windows, write_wav
from ynet.errors import FormatError


def tone(freq, rate, n, amp=0.5):
    return AudioClip(amp * np.sin(2 * np.pi * freq * np.arange(n) / rate), rate)


def test_pcm16_round_trip_within_one_lsb(tmp_path):
    clip = tone(440, 44100, 1000)
    write_wav(clip, tmp_path / "a.wav")
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == 44100
    assert np.max(np.abs(back.samples - clip.samples)) <= 0.5 / 32768 + 1e-12


def test_float32_round_trip_is_exact_for_float32_values(tmp_path):
    x = np.random.default_rng(0).uniform(-2, 2, 500).astype(np.float32).astype(np.float64)
    write_wav(AudioClip(x, 22050), tmp_path / "f.wav", "float32")
    np.testing.assert_array_equal(read_wav(tmp_path / "f.wav").samples, x)


def test_reader_agrees_with_scipy_and_downmixes_stereo(tmp_path):
    rng = np.random.default_rng(1)
    st_data = rng.integers(-30000, 30000, size=(300, 2)).astype(np.int16)
    wavfile.write(tmp_path / "s.wav", 16000, st_data)
    clip = read_wav(tmp_path / "s.wav")
    np.testing.assert_allclose(clip.samples, st_data.mean(axis=1) / 32768.0)
    write_wav(AudioClip(st_data[:, 0] / 32768.0, 16000), tmp_path / "m.wav")
    rate, ref = wavfile.read(tmp_path / "m.wav")
    assert rate == 16000
    np.testing.assert_array_equal(ref, st_data[:, 0])


def test_bad_magic_names_the_chunk(tmp_path):
    p = tmp_path / "x.wav"
    p.write_bytes(b"RIFX" + b"\0" * 40)
    with pytest.raises(FormatError, match="RIFF"):
        read_wav(p)


def test_unsupported_encoding_names_fmt_chunk(tmp_path):
    p = tmp_path / "x.wav"
    write_wav(tone(100, 8000, 10), p)
    blob = bytearray(p.read_bytes())
    blob[34:36] = struct.pack("<H", 24)  # bits per sample
    p.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="fmt"):
        read_wav(p)


def test_truncated_data_chunk_is_an_io_error(tmp_path):
    p = tmp_path / "x.wav"
    write_wav(tone(100, 8000, 100), p)
    p.write_bytes(p.read_bytes()[:-50])
    with pytest.raises(OSError):
        read_wav(p)


@pytest.mark.parametrize("n, expected", [(WINDOW_LEN * 2, 2), (WINDOW_LEN * 2 + WINDOW_LEN // 2, 3),
                                         (WINDOW_LEN * 2 + WINDOW_LEN // 2 - 1, 2), (100, 0)])
def test_slice_windows_pads_half_full_tail(n, expected):
    wins = slice_windows(AudioClip(np.ones(n), 44100))
    assert len(wins) == expected
    assert all(len(w) == WINDOW_LEN for w in wins)


def test_resample_preserves_a_tone():
    src = tone(1000, 48000, 48000)
    out = resample(src, 44100)
    assert len(out) == 44100
    ref = tone(1000, 44100, 44100).samples
    mid = slice(2000, -2000)
    assert np.max(np.abs(out.samples[mid] - ref[mid])) < 1e-3


def test_resample_removes_content_above_new_nyquist():
    src = tone(9000, 44100, 44100)
    out = resample(src, 16000)
    assert np.sqrt(np.mean(out.samples[1000:-1000] ** 2)) < 1e-3


@given(st.integers(1, 5000), st.sampled_from([8000, 16000, 22050, 44100, 48000]),
       st.sampled_from([8000, 10000, 44100]))
@settings(max_examples=40, deadline=None)
def test_resample_length_law(n, src, dst):
    out = resample(AudioClip(np.zeros(n), src), dst)
    assert len(out) == round(n * dst / src)
    assert out.sample_rate == dst
