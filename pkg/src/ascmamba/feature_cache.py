"""Per-clip log-mel extraction with an on-disk cache in the checkpoint container."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import ClipRecord
from .features import FeatureConfig, extract_logmel, load_wav

log = logging.getLogger(__name__)

__all__ = ["worker_count", "cache_path", "extract_cached", "extract_many"]


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("ASCMAMBA_THREADS", "1")))
    except ValueError:
        return 1


def cache_path(cache_dir, filename: str) -> Path:
    return Path(cache_dir) / (filename.replace("/", "__").replace("\\", "__") + ".feat")


def _fingerprint(wav_bytes: bytes, cfg: FeatureConfig) -> str:
    h = hashlib.sha256(wav_bytes)
    h.update(json.dumps(dataclasses.asdict(cfg), sort_keys=True).encode())
    return h.hexdigest()


def extract_cached(wav_path, cfg: FeatureConfig, cache_dir=None, filename: str | None = None):
    """Return ``(feature, computed)``; ``computed`` is False on a cache hit."""
    wav_path = Path(wav_path)
    if not wav_path.exists():
        raise FileNotFoundError(f"no such WAV file: {wav_path}")
    if cache_dir is None:
        return extract_logmel(load_wav(wav_path), cfg), True
    digest = _fingerprint(wav_path.read_bytes(), cfg)
    target = cache_path(cache_dir, filename or wav_path.name)
    if target.exists():
        try:
            tensors, meta = load_checkpoint(target)
            if meta.get("fingerprint") == digest:
                return tensors["logmel"].astype(np.float64), False
        except (CheckpointError, KeyError):
            log.warning("ignoring unreadable cache entry %s", target)
    feat = extract_logmel(load_wav(wav_path), cfg)
    target.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint({"logmel": feat}, {"kind": "logmel", "filename": filename or wav_path.name,
                                       "fingerprint": digest}, target)
    # reload so callers see the same float32-rounded values on every run
    return feat.astype(np.float32).astype(np.float64), True


def extract_many(records: Sequence[ClipRecord], audio_root, cfg: FeatureConfig, cache_dir=None,
                 workers: int | None = None):
    """Features for every record that decodes.

    Returns ``(features, failures, computed)`` where ``features`` maps filename
    to array, ``failures`` maps filename to an error message and ``computed``
    counts cache misses.
    """
    workers = worker_count() if workers is None else workers

    def one(rec):
        try:
            feat, fresh = extract_cached(Path(audio_root) / rec.filename, cfg, cache_dir, rec.filename)
            return rec.filename, feat, fresh, None
        except (OSError, ValueError) as exc:
            return rec.filename, None, False, str(exc)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, records))
    else:
        results = [one(r) for r in records]
    features, failures, computed = {}, {}, 0
    for name, feat, fresh, err in results:
        if err is not None:
            log.warning("skipping %s: %s", name, err)
            failures[name] = err
        else:
            features[name] = feat
            computed += int(fresh)
    return features, failures, computed
