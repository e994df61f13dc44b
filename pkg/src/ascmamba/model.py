"""ASCMamba: DenseEncoder -> dual-path Mamba blocks with conditional LN -> classifier."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from datetime import datetime
from typing import Sequence

import numpy as np

from . import numcore as nc
from .data import parse_time
from .numcore import ParamStore, Tensor
from .ssm import MambaConfig, init_mamba_block, mamba_block
from .training import cross_entropy

__all__ = ["ASCMambaConfig", "LocationVocab", "Condition", "encode_condition",
           "init_ascmamba", "dense_encoder", "dual_path_reshape", "inverse_reshape",
           "condition_vectors", "cln", "ascmamba_forward", "ASCMamba"]

TIME_FEATURES = 4


@dataclass(frozen=True)
class ASCMambaConfig:
    channels: int = 16
    n_blocks: int = 2
    d_state: int = 16
    expand: int = 2
    conv_kernel: int = 4
    d_cond: int = 32
    loc_embed_dim: int = 16
    dense_depth: int = 4
    n_classes: int = 10
    dropout: float = 0.1
    eps: float = 1e-5

    @property
    def mamba(self) -> MambaConfig:
        return MambaConfig(self.channels, self.expand, self.d_state, self.conv_kernel, self.dropout)

    def to_dict(self) -> dict:
        return asdict(self)


class LocationVocab:
    """Sorted location names; id 0 is reserved for unseen locations."""

    def __init__(self, names: Sequence[str] = ()):
        self.names = sorted(set(names))
        self._index = {n: i + 1 for i, n in enumerate(self.names)}

    def __len__(self) -> int:
        return len(self.names) + 1

    def __eq__(self, other) -> bool:
        return isinstance(other, LocationVocab) and self.names == other.names

    def lookup(self, name: str) -> int:
        return self._index.get(name, 0)


@dataclass(frozen=True)
class Condition:
    location_id: int
    time_features: tuple[float, float, float, float]
    present: bool = True


def encode_condition(location: str, record_time: str | datetime, vocab: LocationVocab) -> Condition:
    """Location id (0 when unseen) plus sin/cos of hour-of-day and day-of-year."""
    when = parse_time(record_time) if isinstance(record_time, str) else record_time
    hour = when.hour + when.minute / 60.0 + when.second / 3600.0
    day = when.timetuple().tm_yday
    a, b = 2 * math.pi * hour / 24.0, 2 * math.pi * day / 366.0
    return Condition(vocab.lookup(location), (math.sin(a), math.cos(a), math.sin(b), math.cos(b)))


# -- parameters ------------------------------------------------------------

def init_ascmamba(cfg: ASCMambaConfig, n_locations: int, seed: int = 0) -> ParamStore:
    p = ParamStore(seed)
    c = cfg.channels
    p.uniform("encoder.in.weight", (c, 1, 1, 1), 1)
    p.zeros("encoder.in.bias", (c,))
    for i in range(cfg.dense_depth):
        cin = c * (i + 1)
        p.uniform(f"encoder.dense{i}.weight", (c, cin, 3, 3), cin * 9)
        p.zeros(f"encoder.dense{i}.bias", (c,))
    cin = c * (cfg.dense_depth + 1)
    p.uniform("encoder.fuse.weight", (c, cin, 1, 1), cin)
    p.zeros("encoder.fuse.bias", (c,))
    p.uniform("encoder.down.weight", (c, c, 3, 4), c * 12)
    p.zeros("encoder.down.bias", (c,))

    p.uniform("cond.location_embed", (n_locations, cfg.loc_embed_dim), 1)
    width = cfg.loc_embed_dim + TIME_FEATURES
    p.uniform("cond.proj.weight", (width, cfg.d_cond), width)
    p.zeros("cond.proj.bias", (cfg.d_cond,))

    for b in range(cfg.n_blocks):
        for path in ("time", "freq"):
            pre = f"block{b}.{path}"
            p.zeros(f"{pre}.cln.gamma.weight", (cfg.d_cond, c))
            p.ones(f"{pre}.cln.gamma.bias", (c,))
            p.zeros(f"{pre}.cln.beta.weight", (cfg.d_cond, c))
            p.zeros(f"{pre}.cln.beta.bias", (c,))
            p.ones(f"{pre}.cln.gamma0", (c,))
            p.zeros(f"{pre}.cln.beta0", (c,))
            init_mamba_block(p, f"{pre}.mamba", cfg.mamba)

    p.uniform("head.weight", (c, cfg.n_classes), c)
    p.zeros("head.bias", (cfg.n_classes,))
    return p


# -- building blocks -------------------------------------------------------

def dense_encoder(x: Tensor, params: ParamStore, cfg: ASCMambaConfig) -> Tensor:
    """``B×1×T×F`` -> ``B×C×T×F/2``: 1×1 projection, DenseBlock, strided conv."""
    if x.ndim != 4 or x.shape[1] != 1 or x.shape[3] % 2:
        raise ValueError(f"dense_encoder expects B×1×T×F with even F, got {x.shape}")
    h = nc.silu(nc.conv2d(x, params["encoder.in.weight"], params["encoder.in.bias"]))
    feats = [h]
    for i in range(cfg.dense_depth):
        inp = feats[0] if len(feats) == 1 else nc.concat(feats, axis=1)
        feats.append(nc.silu(nc.conv2d(inp, params[f"encoder.dense{i}.weight"],
                                       params[f"encoder.dense{i}.bias"], pad=1)))
    h = nc.silu(nc.conv2d(nc.concat(feats, axis=1), params["encoder.fuse.weight"],
                          params["encoder.fuse.bias"]))
    return nc.silu(nc.conv2d(h, params["encoder.down.weight"], params["encoder.down.bias"],
                             stride=(1, 2), pad=(1, 1)))


def dual_path_reshape(X, tag: str):
    """``B×C×T×F`` -> ``(B·F)×T×C`` (time) or ``(B·T)×F×C`` (freq)."""
    B, C, T, F = X.shape
    if tag == "time":
        return X.transpose(0, 3, 2, 1).reshape(B * F, T, C)
    if tag == "freq":
        return X.transpose(0, 2, 3, 1).reshape(B * T, F, C)
    raise ValueError(f"unknown path tag {tag!r}")


def inverse_reshape(seq, dims: tuple[int, int, int, int], tag: str):
    B, C, T, F = dims
    expect = (B * F, T, C) if tag == "time" else (B * T, F, C)
    if tag not in ("time", "freq"):
        raise ValueError(f"unknown path tag {tag!r}")
    if tuple(seq.shape) != expect:
        raise ValueError(f"{tag} sequence has shape {tuple(seq.shape)}, expected {expect}")
    if tag == "time":
        return seq.reshape(B, F, T, C).transpose(0, 3, 2, 1)
    return seq.reshape(B, T, F, C).transpose(0, 3, 1, 2)


def condition_vectors(conds: Sequence[Condition], params: ParamStore) -> Tensor:
    """Project location embeddings and cyclic time features to ``B×D_cond``."""
    ids = np.array([c.location_id for c in conds], dtype=np.int64)
    times = Tensor(np.array([c.time_features for c in conds], dtype=nc.get_dtype()))
    emb = nc.take_rows(params["cond.location_embed"], ids)
    return nc.concat([emb, times], axis=1) @ params["cond.proj.weight"] + params["cond.proj.bias"]


def cln(x: Tensor, c: Tensor | None, params: ParamStore, prefix: str, eps: float = 1e-5) -> Tensor:
    """``gamma(c) * LN(x) + beta(c)`` over the last axis of ``x[B, ..., C]``.

    With ``c`` None the learned unconditional ``gamma0``/``beta0`` are used.
    """
    normed = nc.layer_norm(x, eps)
    if c is None:
        return normed * params[f"{prefix}.gamma0"] + params[f"{prefix}.beta0"]
    shape = (c.shape[0],) + (1,) * (x.ndim - 2) + (x.shape[-1],)
    gamma = (c @ params[f"{prefix}.gamma.weight"] + params[f"{prefix}.gamma.bias"]).reshape(shape)
    beta = (c @ params[f"{prefix}.beta.weight"] + params[f"{prefix}.beta.bias"]).reshape(shape)
    return normed * gamma + beta


def _channel_cln(X: Tensor, c, params, prefix, eps) -> Tensor:
    return cln(X.transpose(0, 2, 3, 1), c, params, prefix, eps).transpose(0, 3, 1, 2)


def ascmamba_forward(feats, conds: Sequence[Condition] | None, params: ParamStore,
                     cfg: ASCMambaConfig, rng: np.random.Generator | None = None) -> Tensor:
    """Logits ``B×n_classes`` for log-mel features ``B×T×F`` (or ``B×1×T×F``)."""
    x = nc._as_tensor(feats)
    if x.ndim == 3:
        x = x.reshape(x.shape[0], 1, x.shape[1], x.shape[2])
    X = dense_encoder(x, params, cfg)
    dims = X.shape
    c = None
    if conds is not None:
        if len(conds) != dims[0]:
            raise ValueError(f"{len(conds)} conditions for a batch of {dims[0]}")
        c = condition_vectors(conds, params)
    mcfg = cfg.mamba
    for b in range(cfg.n_blocks):
        for path in ("time", "freq"):
            pre = f"block{b}.{path}"
            X = _channel_cln(X, c, params, f"{pre}.cln", cfg.eps)
            seq = mamba_block(dual_path_reshape(X, path), params, f"{pre}.mamba", mcfg, rng)
            X = inverse_reshape(seq, dims, path)
    pooled = nc.dropout(X.mean(axis=(2, 3)), cfg.dropout, rng)
    return pooled @ params["head.weight"] + params["head.bias"]


class ASCMamba:
    """Parameters, config and location vocabulary bundled for training/inference."""

    kind = "ascmamba"

    def __init__(self, cfg: ASCMambaConfig, vocab: LocationVocab, params: ParamStore | None = None,
                 seed: int = 0):
        self.cfg = cfg
        self.vocab = vocab
        self.params = params if params is not None else init_ascmamba(cfg, len(vocab), seed)

    def conditions(self, records) -> list[Condition]:
        return [encode_condition(r.location, r.record_time, self.vocab) for r in records]

    def logits(self, feats, conds=None, rng=None) -> Tensor:
        return ascmamba_forward(feats, conds, self.params, self.cfg, rng)

    def loss(self, feats, labels, conds=None, rng=None, group_labels=None) -> tuple[Tensor, Tensor]:
        logits = self.logits(feats, conds, rng)
        return cross_entropy(logits, labels), logits

    def predict_proba(self, feats, conds=None) -> np.ndarray:
        with nc.no_grad():
            return nc.softmax(self.logits(feats, conds)).data.astype(np.float64)
