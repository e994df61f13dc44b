"""Cross-entropy, Adam and the epoch loop shared by both classifiers."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import numcore as nc
from .numcore import ParamStore, Tensor

__all__ = ["TrainConfig", "AdamState", "Dataset", "cross_entropy", "adam_step", "train",
           "batch_predict", "format_epoch_log"]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 4
    epochs: int = 10
    seed: int = 0
    dropout: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 0 or self.dropout < 0:
            raise ValueError(f"invalid training configuration: {self}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


@dataclass
class Dataset:
    """Features ``N×T×F`` with labels and optional per-clip conditions."""
    filenames: list[str]
    features: np.ndarray
    labels: np.ndarray
    conditions: list | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.filenames) != len(self.features) or len(self.labels) != len(self.features):
            raise ValueError("filenames, features and labels differ in length")
        if self.conditions is not None and len(self.conditions) != len(self.features):
            raise ValueError("conditions and features differ in length")

    def __len__(self) -> int:
        return len(self.filenames)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        conds = None if self.conditions is None else [self.conditions[i] for i in idx]
        return Dataset([self.filenames[i] for i in idx], self.features[idx], self.labels[idx], conds)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits[B,K]``."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"label out of range [0, {k})")
    picked = nc.log_softmax(logits)[np.arange(n), labels]
    return -picked.sum() * (1.0 / n)


def adam_step(params: ParamStore, grads: dict[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Bias-corrected Adam; replaces each parameter tensor with its update."""
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name in params.names():
        g = grads.get(name)
        p = params[name]
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        params.set(name, p.data - update.astype(p.dtype), p.dtype)
    return state


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train(model, dataset: Dataset, cfg: TrainConfig, use_conditions: bool = True,
          progress=None) -> list[dict]:
    """Fit ``model.params`` in place with Adam; returns the per-epoch log.

    ``model`` is an :class:`~ascmamba.model.ASCMamba` or
    :class:`~ascmamba.setrans.ImprovedSETrans`.  The last partial batch is kept.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    conds = dataset.conditions if use_conditions else None
    log = []
    for epoch in range(1, cfg.epochs + 1):
        total, correct = 0.0, 0
        for idx in _batches(len(dataset), cfg.batch_size, rng):
            params = model.params
            params.zero_grad()
            batch_conds = None if conds is None else [conds[i] for i in idx]
            loss, logits = model.loss(dataset.features[idx], dataset.labels[idx], batch_conds, rng)
            names = params.names()
            grads = nc.backward(loss, [params[n] for n in names])
            adam_step(params, dict(zip(names, grads)), state, cfg.learning_rate,
                      cfg.beta1, cfg.beta2, cfg.adam_eps)
            total += float(loss.data) * len(idx)
            correct += int((logits.data.argmax(axis=1) == dataset.labels[idx]).sum())
        entry = {"epoch": epoch, "loss": total / len(dataset), "train_acc": correct / len(dataset)}
        log.append(entry)
        if progress is not None:
            progress(entry)
    return log


def batch_predict(model, features: np.ndarray, conditions: Sequence | None = None,
                  batch_size: int = 16):
    """Run ``model.predict_proba`` over ``features`` in fixed-order chunks."""
    outs = []
    for start in range(0, len(features), batch_size):
        sl = slice(start, start + batch_size)
        conds = None if conditions is None else list(conditions[sl])
        outs.append(model.predict_proba(features[sl], conds))
    if outs and isinstance(outs[0], tuple):
        return tuple(np.concatenate(parts) for parts in zip(*outs))
    return np.concatenate(outs) if outs else np.zeros((0, 10))


def format_epoch_log(log: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "loss", "train_acc"])
    for e in log:
        writer.writerow([e["epoch"], f"{e['loss']:.6f}", f"{e['train_acc']:.6f}"])
    return buf.getvalue()
