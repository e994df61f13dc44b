import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ascmamba.features import (FeatureConfig, Waveform, WavError, extract_logmel, feature_stats,
                               fix_length, hz_to_mel, load_wav, log_mel, mel_filterbank, mel_to_hz,
                               prepare, resample, standardize, stft_magnitude, write_wav)

SR = 44100


def tone(freq, seconds=10.0, sr=SR, amp=0.5, phase=np.pi / 2):
    t = np.arange(int(round(seconds * sr))) / sr
    return amp * np.sin(2 * np.pi * freq * t + phase)


# -- WAV -------------------------------------------------------------------

def test_zero_wav_decodes_to_zeros(tmp_path):
    write_wav(tmp_path / "z.wav", np.zeros(SR), SR)
    w = load_wav(tmp_path / "z.wav")
    assert w.sample_rate == SR and len(w.samples) == SR and not w.samples.any()


def test_stereo_channels_are_averaged(tmp_path):
    frames = np.column_stack([np.full(100, 0.5), np.full(100, -0.5)])
    write_wav(tmp_path / "s.wav", frames, 16000)
    assert not load_wav(tmp_path / "s.wav").samples.any()


def test_float32_round_trip(tmp_path):
    x = np.random.default_rng(0).uniform(-1, 1, 500)
    write_wav(tmp_path / "f.wav", x, 8000, encoding="float32")
    np.testing.assert_array_equal(load_wav(tmp_path / "f.wav").samples, x.astype(np.float32))


def test_pcm16_round_trip_within_quantisation(tmp_path):
    x = np.random.default_rng(1).uniform(-0.9, 0.9, 500)
    write_wav(tmp_path / "p.wav", x, 8000)
    assert np.max(np.abs(load_wav(tmp_path / "p.wav").samples - x)) < 2 / 32768


def test_extensible_format_is_understood(tmp_path):
    x = (np.arange(8) - 4).astype("<i2") * 1000
    guid = struct.pack("<H", 1) + b"\x00\x00\x00\x00\x10\x00\x80\x00\x00\xaa\x00\x38\x9b\x71"
    fmt = struct.pack("<HHIIHH", 0xFFFE, 1, 8000, 16000, 2, 16) + struct.pack("<HHI", 22, 16, 4) + guid
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", x.nbytes) + x.tobytes()
    (tmp_path / "e.wav").write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    np.testing.assert_array_equal(load_wav(tmp_path / "e.wav").samples, x / 32768.0)


def test_truncated_header_is_malformed(tmp_path):
    write_wav(tmp_path / "t.wav", np.zeros(10), 8000)
    (tmp_path / "t.wav").write_bytes((tmp_path / "t.wav").read_bytes()[:10])
    with pytest.raises(WavError, match="malformed WAV"):
        load_wav(tmp_path / "t.wav")


def test_unsupported_encoding(tmp_path):
    write_wav(tmp_path / "u.wav", np.zeros(10), 8000)
    raw = bytearray((tmp_path / "u.wav").read_bytes())
    raw[34:36] = struct.pack("<H", 24)  # bits per sample
    (tmp_path / "u.wav").write_bytes(bytes(raw))
    with pytest.raises(WavError, match="unsupported WAV encoding"):
        load_wav(tmp_path / "u.wav")


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_wav("/nonexistent/x.wav")


# -- preparation -----------------------------------------------------------

def test_resample_noop_is_bit_identical():
    x = np.random.default_rng(2).standard_normal(1000)
    np.testing.assert_array_equal(resample(Waveform(x, SR), SR).samples, x)


@settings(max_examples=50, deadline=None)
@given(st.integers(4000, 96000), st.integers(4000, 96000), st.floats(-1, 1))
def test_resample_keeps_constants(src, dst, c):
    out = resample(Waveform(np.full(500, c), src), dst).samples
    np.testing.assert_allclose(out, c, atol=1e-12)


def test_resampled_sine_keeps_its_frequency():
    w = resample(Waveform(tone(1000, 1.0, 22050), 22050), SR)
    assert w.sample_rate == SR and len(w.samples) == SR
    mag = stft_magnitude(w)
    assert np.all(np.argmax(mag[2:-2], axis=1) == 46)


def test_fix_length_truncates_pads_and_keeps():
    cut = fix_length(Waveform(np.arange(12 * 100.0), 100), 10)
    np.testing.assert_array_equal(cut.samples, np.arange(1000.0))
    padded = fix_length(Waveform(np.ones(800), 100), 10)
    np.testing.assert_array_equal(padded.samples, np.r_[np.ones(800), np.zeros(200)])
    x = np.random.default_rng(3).standard_normal(1000)
    np.testing.assert_array_equal(fix_length(Waveform(x, 100), 10).samples, x)


# -- STFT / mel ------------------------------------------------------------

def test_silence_gives_zero_magnitudes():
    assert not stft_magnitude(Waveform(np.zeros(SR), SR)).any()


def test_prepared_clip_has_500_frames():
    w = prepare(Waveform(np.zeros(3 * SR), SR))
    assert len(w.samples) == 441000
    assert stft_magnitude(w).shape == (500, 1025)


def test_cosine_peaks_at_bin_46_in_every_frame():
    mag = stft_magnitude(Waveform(tone(1000), SR))
    assert round(1000 * 2048 / SR) == 46
    np.testing.assert_array_equal(np.argmax(mag, axis=1), 46)


def test_sine_peaks_at_bin_46_away_from_the_edges():
    mag = stft_magnitude(Waveform(tone(1000, phase=0.0), SR))
    np.testing.assert_array_equal(np.argmax(mag[2:-2], axis=1), 46)


def test_zero_spectrogram_hits_the_floor():
    out = log_mel(np.zeros((500, 1025)))
    assert out.shape == (500, 64)
    np.testing.assert_array_equal(out, np.log(1e-10))
    assert out[0, 0] == pytest.approx(-23.02585, abs=1e-5)


def test_mel_scale_round_trip():
    f = np.linspace(0, 22050, 101)
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, atol=1e-8)
    assert hz_to_mel(1000.0) == pytest.approx(1000.0, abs=0.1)


def brute_force_filterbank(sr, n_fft, n_mels):
    top = 2595.0 * np.log10(1 + (sr / 2) / 700.0)
    mels = [top * i / (n_mels + 1) for i in range(n_mels + 2)]
    edges = [700.0 * (10 ** (m / 2595.0) - 1) for m in mels]
    rows = []
    for j in range(n_mels):
        lo, mid, hi = edges[j], edges[j + 1], edges[j + 2]
        row = []
        for k in range(n_fft // 2 + 1):
            f = k * sr / n_fft
            if lo < f <= mid:
                v = (f - lo) / (mid - lo)
            elif mid < f < hi:
                v = (hi - f) / (hi - mid)
            else:
                v = 0.0
            row.append(v * 2.0 / (hi - lo))
        rows.append(row)
    return np.array(rows), edges


def test_filterbank_matches_brute_force_construction():
    fb = mel_filterbank(SR, 2048, 64)
    oracle, edges = brute_force_filterbank(SR, 2048, 64)
    np.testing.assert_allclose(fb.sum(axis=1), oracle.sum(axis=1), atol=1e-6)
    np.testing.assert_allclose(fb, oracle, atol=1e-12)


def test_wide_filters_have_unit_area():
    fb = mel_filterbank(SR, 2048, 64)
    df = SR / 2048
    # top filters span dozens of bins, so the Riemann sum approximates the area well
    np.testing.assert_allclose(fb[-10:].sum(axis=1) * df, 1.0, atol=1e-3)


def test_doubling_amplitude_adds_ln4():
    x = np.random.default_rng(4).standard_normal(8000) * 0.1
    cfg = FeatureConfig(sample_rate=8000, clip_seconds=1.0, n_fft=512, n_mels=16)
    a = extract_logmel(Waveform(x, 8000), cfg)
    b = extract_logmel(Waveform(2 * x, 8000), cfg)
    above = a > np.log(cfg.floor) + 1
    assert above.mean() > 0.99
    np.testing.assert_allclose((b - a)[above], np.log(4.0), atol=1e-9)


def test_end_to_end_shape_from_file(tmp_path):
    noise = np.random.default_rng(5).uniform(-0.3, 0.3, 7 * 22050)
    write_wav(tmp_path / "n.wav", noise, 22050)
    f = extract_logmel(load_wav(tmp_path / "n.wav"))
    assert f.shape == (500, 64) and np.all(np.isfinite(f))


def test_silent_clip_is_the_floor_everywhere():
    f = extract_logmel(Waveform(np.zeros(SR), SR))
    assert f.shape == (500, 64)
    np.testing.assert_array_equal(f, np.log(1e-10))


# -- statistics ------------------------------------------------------------

def test_constant_feature_stats():
    s = feature_stats(np.full((20, 4), 3.0))
    np.testing.assert_array_equal(s, [3, 3, 3, 3, 0, 0, 0, 0])


def test_alternating_band_stats():
    f = np.where(np.arange(10)[:, None] % 2, 1.0, -1.0) * np.ones((10, 3))
    np.testing.assert_array_equal(feature_stats(f), [0, 0, 0, 1, 1, 1])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_feature_stats_match_two_pass(seed):
    f = np.random.default_rng(seed).standard_normal((30, 5)) * 4 - 10
    means = [sum(f[:, j]) / len(f) for j in range(5)]
    variances = [sum((v - means[j]) ** 2 for v in f[:, j]) / len(f) for j in range(5)]
    np.testing.assert_allclose(feature_stats(f), means + variances, atol=1e-6)


def test_standardize_moments():
    z = standardize(np.random.default_rng(6).standard_normal((50, 8)) * 7 + 3)
    assert abs(z.mean()) < 1e-12 and abs(z.std() - 1) < 1e-5
