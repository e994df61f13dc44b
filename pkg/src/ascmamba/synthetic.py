"""Synthetic scene corpora for tests and demos.

Each class has its own audio recipe: a tone whose frequency sits in one mel
band, either steady or pulsed, over a white-noise bed.  Clips are rendered as
audio and pass through the real log-mel front-end.
"""
from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .data import SCENES, ClipRecord, write_manifest
from .features import (FeatureConfig, Waveform, extract_logmel, hz_to_mel, mel_to_hz,
                       standardize, write_wav)

__all__ = ["TINY_FEATURES", "class_recipe", "synth_clip", "synthetic_features",
           "location_correlated_records", "write_corpus", "CorpusSpec", "tiny_run_config"]

# 8 kHz, 0.4 s clips -> 20 frames × 8 mel bands
TINY_FEATURES = FeatureConfig(sample_rate=8000, clip_seconds=0.4, n_fft=512, win_ms=40.0,
                              hop_ms=20.0, n_mels=8)

LOCATIONS = ("Xi'an", "Luoyang", "Hefei", "Shanghai", "Chongqing", "Shangrao", "Jinan",
             "Liupanshui")


def class_recipe(k: int, cfg: FeatureConfig) -> tuple[float, bool]:
    """(tone frequency in Hz, pulsed?) for class ``k``."""
    n = len(SCENES)
    centres = mel_to_hz(np.linspace(0, hz_to_mel(cfg.sample_rate / 2), cfg.n_mels + 2))[1:-1]
    band = (k * cfg.n_mels) // n
    return float(centres[band]), bool(k % 2)


def synth_clip(k: int, rng: np.random.Generator, cfg: FeatureConfig = TINY_FEATURES,
               noise: float = 0.05) -> np.ndarray:
    freq, pulsed = class_recipe(k, cfg)
    n = cfg.n_samples
    t = np.arange(n) / cfg.sample_rate
    amp = 0.5 * rng.uniform(0.7, 1.0)
    x = amp * np.sin(2 * np.pi * freq * rng.uniform(0.98, 1.02) * t + rng.uniform(0, 2 * np.pi))
    if pulsed:
        period = 4 * cfg.hop_length
        x *= ((np.arange(n) + rng.integers(period)) // (period // 2)) % 2
    return np.clip(x + noise * rng.standard_normal(n), -1.0, 1.0)


def synthetic_features(n_per_class: int, seed: int = 0, cfg: FeatureConfig = TINY_FEATURES,
                       noise: float = 0.05, classes=None,
                       recipe_of=None) -> tuple[np.ndarray, np.ndarray]:
    """Normalised features ``N×T×F`` and labels, classes interleaved.

    ``recipe_of`` maps a label to the class whose audio recipe it uses, which
    makes classes acoustically indistinguishable when several share a recipe.
    """
    rng = np.random.default_rng(seed)
    classes = list(range(len(SCENES))) if classes is None else list(classes)
    feats, labels = [], []
    for _ in range(n_per_class):
        for k in classes:
            audio = synth_clip(k if recipe_of is None else recipe_of(k), rng, cfg, noise)
            feats.append(standardize(extract_logmel_from(audio, cfg)))
            labels.append(k)
    return np.stack(feats).astype(np.float32), np.array(labels)


def extract_logmel_from(samples: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    return extract_logmel(Waveform(samples, cfg.sample_rate), cfg)


def location_correlated_records(labels, seed: int = 0, prefix: str = "clip") -> list[ClipRecord]:
    """Records whose location is a deterministic function of the class.

    Classes ``k`` and ``k+1`` (for even ``k``) map to different cities, so the
    location disambiguates pairs that share a tone band.
    """
    rng = np.random.default_rng(seed)
    base = datetime(2023, 4, 21)
    out = []
    for i, k in enumerate(labels):
        when = base + timedelta(days=int(rng.integers(0, 129)), hours=int(3 * (k % 8)),
                                minutes=int(rng.integers(0, 60)))
        out.append(ClipRecord(f"{prefix}_{i:04d}.wav", int(k), LOCATIONS[int(k) % len(LOCATIONS)], when))
    return out


@dataclass(frozen=True)
class CorpusSpec:
    n_pretrain_per_class: int = 2
    n_labeled_per_class: int = 2
    n_unlabeled_per_class: int = 6
    n_valid_per_class: int = 2
    noise: float = 0.05


def write_corpus(root, spec: CorpusSpec = CorpusSpec(), seed: int = 0,
                 cfg: FeatureConfig = TINY_FEATURES) -> dict[str, Path]:
    """Render WAVs and ``pretrain/dev/valid`` manifests under ``root``.

    In ``dev.csv`` the unlabeled rows keep an empty scene field; their true
    labels go to ``dev_truth.csv``.
    """
    root = Path(root)
    audio = root / "audio"
    audio.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = {}

    def render(split, n_per_class):
        labels = [k for _ in range(n_per_class) for k in range(len(SCENES))]
        recs = location_correlated_records(labels, seed=int(rng.integers(1 << 31)), prefix=split)
        for r in recs:
            write_wav(audio / r.filename, synth_clip(r.scene, rng, cfg, spec.noise), cfg.sample_rate)
        return recs

    pre = render("pretrain", spec.n_pretrain_per_class)
    lab = render("labeled", spec.n_labeled_per_class)
    unl = render("unlabeled", spec.n_unlabeled_per_class)
    val = render("valid", spec.n_valid_per_class)
    for name, recs in (("pretrain", pre), ("valid", val), ("dev_truth", lab + unl)):
        paths[name] = root / f"{name}.csv"
        write_manifest(paths[name], recs)
    paths["dev"] = root / "dev.csv"
    write_manifest(paths["dev"], lab + [r.with_scene(None) for r in unl])
    paths["audio"] = audio
    return paths


def tiny_run_config(seed: int = 0, epochs: tuple[int, int, int, int] = (60, 80, 40, 40),
                    learning_rate: float = 1e-3, run_dir: str = "run", **overrides) -> dict:
    """Config dict for a seconds-long pipeline run over a :func:`write_corpus` tree."""
    cfg = {
        "seed": seed,
        "paths": {"pretrain_manifest": "pretrain.csv", "dev_manifest": "dev.csv",
                  "valid_manifest": "valid.csv", "audio_root": "audio", "run_dir": run_dir},
        "features": {"sample_rate": TINY_FEATURES.sample_rate, "clip_seconds": TINY_FEATURES.clip_seconds,
                     "n_fft": TINY_FEATURES.n_fft, "n_mels": TINY_FEATURES.n_mels},
        "model": {"channels": 4, "n_blocks": 1, "d_state": 4, "d_cond": 8, "loc_embed_dim": 4},
        "setrans": {"channels": [4, 8], "d_model": 16, "n_heads": 4, "d_ff": 32},
        "train": {"learning_rate": learning_rate},
        "stage_epochs": dict(zip(("pretrain", "finetune", "setrans", "final"), epochs)),
    }
    cfg.update(overrides)
    return cfg
