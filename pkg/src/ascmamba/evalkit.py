"""Validation splitting by feature-statistics similarity, metadata perturbations,
and accuracy metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .data import SCENES, ClipRecord

__all__ = ["DEFAULT_UNSEEN", "SplitConfig", "PerturbConfig", "SplitResult", "cosine_similarity",
           "reference_stats", "split_validation", "affected_count", "shuffle_metadata",
           "swap_unseen_locations", "perturb", "accuracy", "macro_accuracy", "class_report"]

DEFAULT_UNSEEN = ("Nanchang", "Shenyang", "Guangzhou", "Changchun", "Tianjin", "Taiyuan")


@dataclass(frozen=True)
class SplitConfig:
    similarity_threshold: float = 0.9
    invert: bool = False
    reference: tuple | None = None

    def __post_init__(self):
        if not 0.0 <= self.similarity_threshold <= 1.0:
            raise ValueError("similarity_threshold must lie in [0, 1]")


@dataclass(frozen=True)
class PerturbConfig:
    mode: str = "shuffle"
    proportion: float = 5.0
    unseen_locations: tuple = DEFAULT_UNSEEN
    seed: int = 0
    independent_shuffle: bool = False

    def __post_init__(self):
        if self.mode not in ("shuffle", "unseen_location"):
            raise ValueError(f"unknown perturbation mode {self.mode!r}")
        if not 0.0 <= self.proportion <= 100.0:
            raise ValueError("proportion must lie in [0, 100]")


@dataclass
class SplitResult:
    easy: list[str]
    hard: list[str]
    similarity: dict[str, float] = field(default_factory=dict)


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine similarity of a zero-norm vector is undefined")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def reference_stats(eval_stats: Sequence) -> np.ndarray:
    """Centroid of the evaluation pool's per-clip feature statistics."""
    if len(eval_stats) == 0:
        raise ValueError("empty evaluation pool")
    return np.mean(np.asarray(eval_stats, dtype=np.float64), axis=0)


def split_validation(clip_stats: Mapping[str, Sequence[float]], cfg: SplitConfig) -> SplitResult:
    """Clips more similar than the threshold to the reference go to Hard.

    Exactly-at-threshold goes to Easy.  ``cfg.invert`` swaps the two sets.
    """
    if not clip_stats:
        raise ValueError("empty validation set")
    if cfg.reference is None:
        raise ValueError("SplitConfig.reference is not set")
    ref = np.asarray(cfg.reference, dtype=np.float64)
    easy, hard, sims = [], [], {}
    for name in sorted(clip_stats):
        s = cosine_similarity(clip_stats[name], ref)
        sims[name] = s
        (hard if s > cfg.similarity_threshold else easy).append(name)
    if cfg.invert:
        easy, hard = hard, easy
    return SplitResult(easy, hard, sims)


def affected_count(n: int, proportion: float) -> int:
    """``round(proportion% of n)`` with halves rounded away from zero."""
    return int(math.floor(proportion * n / 100.0 + 0.5))


def _select(records: Sequence[ClipRecord], proportion: float, rng: np.random.Generator) -> list[int]:
    order = sorted(range(len(records)), key=lambda i: records[i].filename)
    k = affected_count(len(records), proportion)
    picks = rng.choice(len(order), size=k, replace=False) if k else []
    # filename order, so the outcome never depends on manifest row order
    return [order[int(j)] for j in sorted(picks)]


def _cyclic_permutation(k: int, rng: np.random.Generator) -> list[int]:
    # Sattolo's algorithm: uniform over k-cycles, hence fixed-point free for k >= 2
    perm = list(range(k))
    for i in range(k - 1, 0, -1):
        j = int(rng.integers(0, i))
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def shuffle_metadata(records: Sequence[ClipRecord], cfg: PerturbConfig) -> list[ClipRecord]:
    """Permute (location, record_time) among a seeded ``proportion``% of clips."""
    rng = np.random.default_rng(cfg.seed)
    out = list(records)
    chosen = _select(records, cfg.proportion, rng)
    if len(chosen) < 2:
        return out
    perm = _cyclic_permutation(len(chosen), rng)
    time_perm = _cyclic_permutation(len(chosen), rng) if cfg.independent_shuffle else perm
    for dst, (ls, ts) in zip(chosen, zip(perm, time_perm)):
        out[dst] = replace(records[dst], location=records[chosen[ls]].location,
                           record_time=records[chosen[ts]].record_time)
    return out


def swap_unseen_locations(records: Sequence[ClipRecord], cfg: PerturbConfig) -> list[ClipRecord]:
    """Give a seeded ``proportion``% of clips a location drawn from the unseen list."""
    if not cfg.unseen_locations:
        raise ValueError("unseen location list is empty")
    rng = np.random.default_rng(cfg.seed)
    out = list(records)
    for i in _select(records, cfg.proportion, rng):
        city = cfg.unseen_locations[int(rng.integers(0, len(cfg.unseen_locations)))]
        out[i] = replace(records[i], location=city)
    return out


def perturb(records: Sequence[ClipRecord], cfg: PerturbConfig) -> list[ClipRecord]:
    if cfg.mode == "shuffle":
        return shuffle_metadata(records, cfg)
    return swap_unseen_locations(records, cfg)


def _check_pairs(preds, labels) -> tuple[np.ndarray, np.ndarray]:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if len(preds) != len(labels):
        raise ValueError(f"{len(preds)} predictions for {len(labels)} labels")
    if len(labels) == 0:
        raise ValueError("no samples to score")
    return preds, labels


def accuracy(preds, labels) -> float:
    preds, labels = _check_pairs(preds, labels)
    return float(np.mean(preds == labels))


def macro_accuracy(preds, labels) -> tuple[dict[int, float], float]:
    """Per-class recall over classes present in ``labels`` and their unweighted mean."""
    preds, labels = _check_pairs(preds, labels)
    per_class = {int(c): float(np.mean(preds[labels == c] == c)) for c in np.unique(labels)}
    return per_class, float(np.mean(list(per_class.values())))


def class_report(preds, labels, system: str = "system") -> dict:
    """Per-scene accuracy (%) plus average, laid out like one row of a results table."""
    per_class, macro = macro_accuracy(preds, labels)
    row = {SCENES[c]: round(100.0 * v, 2) for c, v in sorted(per_class.items())}
    return {"system": system, "per_class": row, "average": round(100.0 * macro, 2),
            "accuracy": round(100.0 * accuracy(preds, labels), 2),
            "macro_accuracy": round(100.0 * macro, 2), "n": int(len(labels))}
