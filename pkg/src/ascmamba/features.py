"""WAV decoding and the log-mel front-end.

Defaults reproduce the 10 s / 44.1 kHz / 2048-point / 40 ms Hann / 20 ms hop /
64-band setting, which yields a 500×64 feature per clip.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["Waveform", "FeatureConfig", "WavError", "load_wav", "write_wav", "resample",
           "fix_length", "stft_magnitude", "mel_filterbank", "log_mel", "feature_stats",
           "prepare", "extract_logmel", "standardize", "hz_to_mel", "mel_to_hz"]


class WavError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 44100
    clip_seconds: float = 10.0
    n_fft: int = 2048
    win_ms: float = 40.0
    hop_ms: float = 20.0
    n_mels: int = 64
    floor: float = 1e-10

    @property
    def win_length(self) -> int:
        return int(round(self.sample_rate * self.win_ms / 1000.0))

    @property
    def hop_length(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))

    @property
    def n_samples(self) -> int:
        return int(round(self.sample_rate * self.clip_seconds))

    @property
    def n_frames(self) -> int:
        return self.n_samples // self.hop_length


# -- WAV I/O ---------------------------------------------------------------

def load_wav(path) -> Waveform:
    """Decode a PCM16 or float32 RIFF/WAVE file to mono samples in [-1, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such WAV file: {path}")
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavError(f"malformed WAV: missing RIFF/WAVE header in {path}")
    pos, fmt, data = 12, None, None
    while pos + 8 <= len(raw):
        cid, size = raw[pos:pos + 4], struct.unpack("<I", raw[pos + 4:pos + 8])[0]
        body = raw[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise WavError(f"malformed WAV: short fmt chunk in {path}")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise WavError(f"malformed WAV: missing fmt or data chunk in {path}")
    tag, channels, rate, _, _, bits = fmt
    if tag == 0xFFFE:  # WAVE_FORMAT_EXTENSIBLE: real tag opens the subformat GUID
        sub = raw.find(b"fmt ") + 8 + 24
        if sub + 2 > len(raw):
            raise WavError(f"malformed WAV: truncated extensible fmt chunk in {path}")
        tag = struct.unpack("<H", raw[sub:sub + 2])[0]
    if channels < 1 or rate <= 0:
        raise WavError(f"malformed WAV: {channels} channels at {rate} Hz in {path}")
    if tag == 1 and bits == 16:
        frame = np.frombuffer(data[:len(data) // 2 * 2], dtype="<i2").astype(np.float64) / 32768.0
    elif tag == 3 and bits == 32:
        frame = np.frombuffer(data[:len(data) // 4 * 4], dtype="<f4").astype(np.float64)
    else:
        raise WavError(f"unsupported WAV encoding (format {tag}, {bits} bits) in {path}")
    frame = frame[:len(frame) // channels * channels].reshape(-1, channels)
    return Waveform(frame.mean(axis=1), int(rate))


def write_wav(path, samples, sample_rate: int, encoding: str = "pcm16") -> None:
    """Write mono (1-D) or multichannel (N×C) samples as PCM16 or float32."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    channels = x.shape[1]
    if encoding == "pcm16":
        payload = np.clip(np.round(x * 32767.0), -32768, 32767).astype("<i2").tobytes()
        tag, bits = 1, 16
    elif encoding == "float32":
        payload = x.astype("<f4").tobytes()
        tag, bits = 3, 32
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, sample_rate, sample_rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


# -- waveform preparation --------------------------------------------------

def resample(w: Waveform, target_rate: int) -> Waveform:
    """Linear-interpolation resampling."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if len(w.samples) == 0:
        raise ValueError("cannot resample an empty waveform")
    if w.sample_rate == target_rate:
        return Waveform(w.samples.copy(), target_rate)
    n_out = int(round(len(w.samples) * target_rate / w.sample_rate))
    src_pos = np.arange(n_out) * (w.sample_rate / target_rate)
    return Waveform(np.interp(src_pos, np.arange(len(w.samples)), w.samples), target_rate)


def fix_length(w: Waveform, seconds: float = 10.0) -> Waveform:
    n = int(round(seconds * w.sample_rate))
    x = w.samples[:n]
    if len(x) < n:
        x = np.concatenate([x, np.zeros(n - len(x), dtype=x.dtype)])
    return Waveform(x, w.sample_rate)


def prepare(w: Waveform, cfg: FeatureConfig = FeatureConfig()) -> Waveform:
    return fix_length(resample(w, cfg.sample_rate), cfg.clip_seconds)


# -- spectral features -----------------------------------------------------

def stft_magnitude(w: Waveform, n_fft: int = 2048, win_ms: float = 40.0,
                   hop_ms: float = 20.0) -> np.ndarray:
    """Magnitude STFT, ``len // hop`` frames × ``n_fft//2 + 1`` bins.

    A periodic Hann window of ``win_ms`` is centred inside each ``n_fft`` frame;
    the signal is reflect-padded by ``n_fft//2`` on both sides so frame ``t`` is
    centred on sample ``t*hop``.
    """
    sr = w.sample_rate
    win_length = int(round(sr * win_ms / 1000.0))
    hop = int(round(sr * hop_ms / 1000.0))
    if win_length > n_fft:
        raise ValueError(f"window of {win_length} samples is longer than n_fft={n_fft}")
    x = np.asarray(w.samples, dtype=np.float64)
    n_frames = len(x) // hop
    window = np.zeros(n_fft)
    left = (n_fft - win_length) // 2
    window[left:left + win_length] = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(win_length) / win_length)
    pad = n_fft // 2
    xp = np.pad(x, pad, mode="reflect" if len(x) > pad else "constant")
    frames = np.lib.stride_tricks.sliding_window_view(xp, n_fft)[::hop][:n_frames]
    return np.abs(np.fft.rfft(frames * window, axis=-1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int) -> np.ndarray:
    """HTK-scale triangles from 0 Hz to Nyquist, each scaled to unit area."""
    n_bins = n_fft // 2 + 1
    if n_mels > n_bins:
        raise ValueError(f"n_mels={n_mels} exceeds the {n_bins} frequency bins")
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    freqs = np.arange(n_bins) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    tri = np.maximum(0.0, np.minimum(rising, falling))
    return tri * (2.0 / (hi - lo))


def log_mel(spec: np.ndarray, sample_rate: int = 44100, n_fft: int = 2048,
            n_mels: int = 64, floor: float = 1e-10) -> np.ndarray:
    """Natural log of mel-filtered power, clamped below at ``floor``."""
    spec = np.asarray(spec, dtype=np.float64)
    fb = mel_filterbank(sample_rate, n_fft, n_mels)
    if spec.shape[-1] != fb.shape[1]:
        raise ValueError(f"spectrogram has {spec.shape[-1]} bins, expected {fb.shape[1]}")
    return np.log(np.maximum((spec * spec) @ fb.T, floor))


def feature_stats(f: np.ndarray) -> np.ndarray:
    """Per-band means followed by per-band population variances."""
    f = np.asarray(f, dtype=np.float64)
    return np.concatenate([f.mean(axis=0), f.var(axis=0)])


def standardize(feature: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance rescaling of one clip's feature (model input)."""
    f = np.asarray(feature, dtype=np.float64)
    return (f - f.mean()) / (f.std() + 1e-5)


def extract_logmel(w: Waveform, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Waveform at any rate -> ``n_frames × n_mels`` log-mel feature."""
    w = prepare(w, cfg)
    spec = stft_magnitude(w, cfg.n_fft, cfg.win_ms, cfg.hop_ms)
    return log_mel(spec, cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.floor)
