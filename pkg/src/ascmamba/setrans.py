"""Improved SE-Trans: multi-scale SE conv stages, a transformer encoder layer,
a 10-way scene head and an indoor/outdoor head fused by probability product."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import numcore as nc
from .data import INDOOR, SCENES
from .numcore import ParamStore, Tensor
from .training import cross_entropy

__all__ = ["SETransConfig", "ScenePartition", "init_setrans", "se_block_multiscale",
           "setrans_forward", "score_fusion", "ImprovedSETrans", "adaptive_pool_matrix",
           "upsample_matrix", "avg_pool_matrix"]

SE_SCALES = (1, 2, 3)


@dataclass(frozen=True)
class SETransConfig:
    channels: tuple[int, int] = (16, 32)
    n_mels: int = 64
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 128
    reduction: int = 4
    n_classes: int = 10
    dropout: float = 0.1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ScenePartition:
    indoor: frozenset = field(default_factory=lambda: frozenset(SCENES.index(s) for s in INDOOR))
    outdoor: frozenset = field(default_factory=lambda: frozenset(
        i for i, s in enumerate(SCENES) if s not in INDOOR))

    def __post_init__(self):
        indoor, outdoor = set(self.indoor), set(self.outdoor)
        if indoor & outdoor:
            raise ValueError(f"partition overlaps on classes {sorted(indoor & outdoor)}")
        if indoor | outdoor != set(range(len(SCENES))):
            missing = sorted(set(range(len(SCENES))) - indoor - outdoor)
            raise ValueError(f"partition is incomplete or out of range (missing {missing})")

    @classmethod
    def from_names(cls, indoor: Sequence[str], outdoor: Sequence[str] | None = None) -> "ScenePartition":
        ids = frozenset(SCENES.index(s) for s in indoor)
        if outdoor is None:
            rest = frozenset(range(len(SCENES))) - ids
        else:
            rest = frozenset(SCENES.index(s) for s in outdoor)
        return cls(ids, rest)

    def group_of(self) -> np.ndarray:
        """Group index per class: 0 indoor, 1 outdoor."""
        return np.array([0 if c in self.indoor else 1 for c in range(len(SCENES))])


# -- constant resampling operators ----------------------------------------

@lru_cache(maxsize=None)
def adaptive_pool_matrix(n: int, s: int) -> np.ndarray:
    """``s×n`` averaging matrix with adaptive-pool bin edges."""
    m = np.zeros((s, n))
    for i in range(s):
        lo, hi = (i * n) // s, -((-(i + 1) * n) // s)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


@lru_cache(maxsize=None)
def upsample_matrix(n: int, s: int) -> np.ndarray:
    """``n×s`` nearest-neighbour selection matrix."""
    m = np.zeros((n, s))
    m[np.arange(n), (np.arange(n) * s) // n] = 1.0
    return m


@lru_cache(maxsize=None)
def avg_pool_matrix(n: int) -> np.ndarray:
    """``(n//2)×n`` matrix for 2-wide, stride-2 average pooling."""
    m = np.zeros((n // 2, n))
    for i in range(n // 2):
        m[i, 2 * i:2 * i + 2] = 0.5
    return m


def _const(a: np.ndarray) -> Tensor:
    return Tensor(a.astype(nc.get_dtype()))


# -- parameters ------------------------------------------------------------

def _init_se(p: ParamStore, prefix: str, cin: int, cout: int, reduction: int) -> None:
    p.uniform(f"{prefix}.conv1.weight", (cout, cin, 3, 3), cin * 9)
    p.zeros(f"{prefix}.conv1.bias", (cout,))
    p.uniform(f"{prefix}.conv2.weight", (cout, cout, 3, 3), cout * 9)
    p.zeros(f"{prefix}.conv2.bias", (cout,))
    hidden = max(1, cout // reduction)
    for s in SE_SCALES:
        p.uniform(f"{prefix}.se{s}.fc1.weight", (cout, hidden), cout)
        p.zeros(f"{prefix}.se{s}.fc1.bias", (hidden,))
        p.uniform(f"{prefix}.se{s}.fc2.weight", (hidden, cout), hidden)
        p.zeros(f"{prefix}.se{s}.fc2.bias", (cout,))


def init_setrans(cfg: SETransConfig, seed: int = 0) -> ParamStore:
    p = ParamStore(seed)
    c1, c2 = cfg.channels
    _init_se(p, "se0", 1, c1, cfg.reduction)
    _init_se(p, "se1", c1, c2, cfg.reduction)
    width = c2 * (cfg.n_mels // 4)
    d, ff = cfg.d_model, cfg.d_ff
    p.uniform("frame_proj.weight", (width, d), width)
    p.zeros("frame_proj.bias", (d,))
    for name in ("q", "k", "v", "o"):
        p.uniform(f"encoder.attn.{name}.weight", (d, d), d)
        p.zeros(f"encoder.attn.{name}.bias", (d,))
    p.uniform("encoder.ff1.weight", (d, ff), d)
    p.zeros("encoder.ff1.bias", (ff,))
    p.uniform("encoder.ff2.weight", (ff, d), ff)
    p.zeros("encoder.ff2.bias", (d,))
    for ln in ("ln1", "ln2"):
        p.ones(f"encoder.{ln}.gamma", (d,))
        p.zeros(f"encoder.{ln}.beta", (d,))
    p.uniform("scene_head.weight", (d, cfg.n_classes), d)
    p.zeros("scene_head.bias", (cfg.n_classes,))
    p.uniform("group_head.weight", (d, 2), d)
    p.zeros("group_head.bias", (2,))
    return p


# -- forward ---------------------------------------------------------------

def se_block_multiscale(x: Tensor, params: ParamStore, prefix: str) -> Tensor:
    """Two 3×3 convs, 1/2/3-grid squeeze-excitation averaged, then 2×2 avg pool."""
    if x.ndim != 4 or x.shape[1] != params[f"{prefix}.conv1.weight"].shape[1]:
        raise ValueError(f"{prefix}: bad input shape {x.shape}")
    h = nc.silu(nc.conv2d(x, params[f"{prefix}.conv1.weight"], params[f"{prefix}.conv1.bias"], pad=1))
    h = nc.silu(nc.conv2d(h, params[f"{prefix}.conv2.weight"], params[f"{prefix}.conv2.bias"], pad=1))
    T, F = h.shape[2], h.shape[3]
    excite = None
    for s in SE_SCALES:
        grid = _const(adaptive_pool_matrix(T, s)) @ h @ _const(adaptive_pool_matrix(F, s).T)
        z = grid.transpose(0, 2, 3, 1)  # B,s,s,C
        z = nc.silu(z @ params[f"{prefix}.se{s}.fc1.weight"] + params[f"{prefix}.se{s}.fc1.bias"])
        z = nc.sigmoid(z @ params[f"{prefix}.se{s}.fc2.weight"] + params[f"{prefix}.se{s}.fc2.bias"])
        w = _const(upsample_matrix(T, s)) @ z.transpose(0, 3, 1, 2) @ _const(upsample_matrix(F, s).T)
        excite = w if excite is None else excite + w
    h = h * (excite * (1.0 / len(SE_SCALES)))
    return _const(avg_pool_matrix(T)) @ h @ _const(avg_pool_matrix(F).T)


def _sinusoid(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def _affine_ln(x: Tensor, params: ParamStore, prefix: str) -> Tensor:
    return nc.layer_norm(x) * params[f"{prefix}.gamma"] + params[f"{prefix}.beta"]


def _attention(x: Tensor, params: ParamStore, n_heads: int) -> Tensor:
    B, L, d = x.shape
    dh = d // n_heads

    def heads(name):
        y = x @ params[f"encoder.attn.{name}.weight"] + params[f"encoder.attn.{name}.bias"]
        return y.reshape(B, L, n_heads, dh).transpose(0, 2, 1, 3)
    q, k, v = heads("q"), heads("k"), heads("v")
    att = nc.softmax((q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh)))
    out = (att @ v).transpose(0, 2, 1, 3).reshape(B, L, d)
    return out @ params["encoder.attn.o.weight"] + params["encoder.attn.o.bias"]


def setrans_forward(feats, params: ParamStore, cfg: SETransConfig,
                    rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    """Scene and indoor/outdoor logits for features ``B×T×F``."""
    x = nc._as_tensor(feats)
    if x.ndim == 3:
        x = x.reshape(x.shape[0], 1, x.shape[1], x.shape[2])
    if x.shape[3] != cfg.n_mels:
        raise ValueError(f"expected {cfg.n_mels} mel bands, got {x.shape[3]}")
    h = se_block_multiscale(x, params, "se0")
    h = se_block_multiscale(h, params, "se1")
    B, C, T, F = h.shape
    seq = h.transpose(0, 2, 1, 3).reshape(B, T, C * F)
    seq = seq @ params["frame_proj.weight"] + params["frame_proj.bias"]
    seq = seq + _const(_sinusoid(T, cfg.d_model))
    a = _affine_ln(seq + nc.dropout(_attention(seq, params, cfg.n_heads), cfg.dropout, rng),
                   params, "encoder.ln1")
    ff = nc.relu(a @ params["encoder.ff1.weight"] + params["encoder.ff1.bias"])
    ff = ff @ params["encoder.ff2.weight"] + params["encoder.ff2.bias"]
    enc = _affine_ln(a + nc.dropout(ff, cfg.dropout, rng), params, "encoder.ln2")
    pooled = nc.dropout(enc.mean(axis=1), cfg.dropout, rng)
    scene = pooled @ params["scene_head.weight"] + params["scene_head.bias"]
    group = pooled @ params["group_head.weight"] + params["group_head.bias"]
    return scene, group


def _check_probs(p: np.ndarray, name: str) -> None:
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"{name} is not a probability vector (sum {p.sum():.8f})")


def score_fusion(y1, y2, partition: ScenePartition = ScenePartition(), validate: bool = True) -> int:
    """Argmax over classes of ``y1[c] * y2[group(c)]``, lowest id on ties."""
    y1 = np.asarray(y1, dtype=np.float64)
    y2 = np.asarray(y2, dtype=np.float64)
    if y1.shape != (len(SCENES),) or y2.shape != (2,):
        raise ValueError(f"expected 10- and 2-way vectors, got {y1.shape} and {y2.shape}")
    if validate:
        _check_probs(y1, "y1")
        _check_probs(y2, "y2")
    return int(np.argmax(y1 * y2[partition.group_of()]))


class ImprovedSETrans:
    kind = "setrans"

    def __init__(self, cfg: SETransConfig, params: ParamStore | None = None, seed: int = 0,
                 partition: ScenePartition = ScenePartition()):
        self.cfg = cfg
        self.partition = partition
        self.params = params if params is not None else init_setrans(cfg, seed)

    def loss(self, feats, labels, conds=None, rng=None, group_labels=None):
        labels = np.asarray(labels)
        if group_labels is None:
            group_labels = self.partition.group_of()[labels]
        scene, group = setrans_forward(feats, self.params, self.cfg, rng)
        return cross_entropy(scene, labels) + cross_entropy(group, group_labels), scene

    def predict_proba(self, feats, conds=None) -> tuple[np.ndarray, np.ndarray]:
        with nc.no_grad():
            scene, group = setrans_forward(feats, self.params, self.cfg)
            return (nc.softmax(scene).data.astype(np.float64),
                    nc.softmax(group).data.astype(np.float64))

    def predict(self, feats) -> np.ndarray:
        y1, y2 = self.predict_proba(feats)
        return np.array([score_fusion(a / a.sum(), b / b.sum(), self.partition, validate=False)
                         for a, b in zip(y1, y2)])
