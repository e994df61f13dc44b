"""Selective state-space scan and the Mamba block built around it."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .numcore import ParamStore, Tensor

__all__ = ["MambaConfig", "zoh_discretize", "selective_scan", "naive_scan_oracle",
           "init_mamba_block", "ssm_inputs", "mamba_block"]


@dataclass(frozen=True)
class MambaConfig:
    d_model: int
    expand: int = 2
    d_state: int = 16
    conv_kernel: int = 4
    dropout: float = 0.0

    @property
    def d_inner(self) -> int:
        return self.expand * self.d_model


def zoh_discretize(A_row, B_t, delta_t: float):
    """Return ``(exp(delta*A), delta*B)`` for one channel at one step."""
    if delta_t <= 0:
        raise ValueError("delta_t must be positive")
    A_row = np.asarray(A_row, dtype=np.float64)
    B_t = np.asarray(B_t, dtype=np.float64)
    return np.exp(delta_t * A_row), delta_t * B_t


def _check_scan_shapes(x, delta, A, Bsel, Csel, D):
    if x.ndim != 3:
        raise ValueError(f"scan input must be B×L×E, got {x.shape}")
    b, L, e = x.shape
    n = A.shape[1] if A.ndim == 2 else -1
    if L < 1:
        raise ValueError("sequence length must be ≥ 1")
    if (delta.shape != x.shape or A.shape != (e, n) or Bsel.shape != (b, L, n)
            or Csel.shape != (b, L, n) or D.shape != (e,)):
        raise ValueError(
            f"scan shape mismatch: x{x.shape} delta{delta.shape} A{A.shape} "
            f"B{Bsel.shape} C{Csel.shape} D{D.shape}")


def selective_scan(x, delta, A, Bsel, Csel, D) -> Tensor:
    """Input-dependent diagonal SSM over ``x[B,L,E]``.

    Per channel ``e``: ``h_t = exp(delta_t*A_e) * h_{t-1} + delta_t*B_t*x_t``
    with ``h_0 = 0`` and ``y_t = <C_t, h_t> + D_e*x_t``.  ``A`` is ``E×N``,
    ``Bsel``/``Csel`` are ``B×L×N``.  Sequential over L, vectorised over the
    rest; one graph node with an explicit reverse-time backward.
    """
    x, delta, A, Bsel, Csel, D = (nc._as_tensor(t) for t in (x, delta, A, Bsel, Csel, D))
    _check_scan_shapes(x, delta, A, Bsel, Csel, D)
    xd, dd, Ad, Bd, Cd, Dd = x.data, delta.data, A.data, Bsel.data, Csel.data, D.data
    b, L, e = xd.shape
    n = Ad.shape[1]

    dA = np.exp(dd[..., None] * Ad)                       # B,L,E,N
    dBx = (dd * xd)[..., None] * Bd[:, :, None, :]         # B,L,E,N
    hs = np.empty((b, L, e, n), dtype=dA.dtype)
    h = np.zeros((b, e, n), dtype=dA.dtype)
    for t in range(L):
        h = dA[:, t] * h + dBx[:, t]
        hs[:, t] = h
    y = np.einsum("blen,bln->ble", hs, Cd) + xd * Dd

    def bw(g):
        gC = np.einsum("ble,blen->bln", g, hs)
        gD = (g * xd).sum(axis=(0, 1))
        gx = g * Dd
        gdA = np.empty_like(hs)
        gdBx = np.empty_like(hs)
        gh = np.zeros((b, e, n), dtype=hs.dtype)
        for t in range(L - 1, -1, -1):
            gh = gh + g[:, t, :, None] * Cd[:, t, None, :]
            gdBx[:, t] = gh
            gdA[:, t] = gh * (hs[:, t - 1] if t > 0 else 0.0)
            gh = gh * dA[:, t]
        gdA_pre = gdA * dA                               # grad wrt delta*A
        gdelta = (gdA_pre * Ad).sum(-1) + (gdBx * Bd[:, :, None, :]).sum(-1) * xd
        gA = np.einsum("blen,ble->en", gdA_pre, dd)
        gBx = (gdBx * Bd[:, :, None, :]).sum(-1)          # grad wrt delta*x
        gx = gx + gBx * dd
        gB = np.einsum("blen,ble->bln", gdBx, dd * xd)
        return gx, gdelta, gA, gB, gC, gD
    return nc.make_op(y, (x, delta, A, Bsel, Csel, D), bw)


def naive_scan_oracle(x, delta, A, Bsel, Csel, D) -> np.ndarray:
    """Literal per-timestep, per-channel, per-state loop in float64.

    Reference for tests only.
    """
    x, delta, A, Bsel, Csel, D = (np.asarray(getattr(t, "data", t), dtype=np.float64)
                                  for t in (x, delta, A, Bsel, Csel, D))
    _check_scan_shapes(x, delta, A, Bsel, Csel, D)
    b, L, e = x.shape
    n = A.shape[1]
    y = np.zeros((b, L, e))
    for bi in range(b):
        for ei in range(e):
            h = [0.0] * n
            for t in range(L):
                acc = 0.0
                for k in range(n):
                    abar, bbar = zoh_discretize(A[ei, k], Bsel[bi, t, k], delta[bi, t, ei])
                    h[k] = float(abar) * h[k] + float(bbar) * x[bi, t, ei]
                    acc += Csel[bi, t, k] * h[k]
                y[bi, t, ei] = acc + D[ei] * x[bi, t, ei]
    return y


def init_mamba_block(params: ParamStore, prefix: str, cfg: MambaConfig) -> None:
    c, e, n, k = cfg.d_model, cfg.d_inner, cfg.d_state, cfg.conv_kernel
    params.uniform(f"{prefix}.in_proj.weight", (c, 2 * e), c)
    params.zeros(f"{prefix}.in_proj.bias", (2 * e,))
    params.uniform(f"{prefix}.conv.weight", (e, k), k)
    params.zeros(f"{prefix}.conv.bias", (e,))
    params.uniform(f"{prefix}.dt_proj.weight", (e, e), e)
    # softplus^{-1} of step sizes log-spaced in [1e-3, 1e-1]
    u = nc.splitmix_uniform(params.seed, f"{prefix}.dt_proj.bias", e)
    dt = np.exp(np.log(1e-3) + u * (np.log(1e-1) - np.log(1e-3)))
    params.add(f"{prefix}.dt_proj.bias", dt + np.log(-np.expm1(-dt)))
    params.uniform(f"{prefix}.B_proj.weight", (e, n), e)
    params.uniform(f"{prefix}.C_proj.weight", (e, n), e)
    params.add(f"{prefix}.A_log", np.log(np.tile(np.arange(1, n + 1, dtype=np.float64), (e, 1))))
    params.ones(f"{prefix}.D", (e,))
    params.uniform(f"{prefix}.out_proj.weight", (e, c), e)
    params.zeros(f"{prefix}.out_proj.bias", (c,))


def ssm_inputs(u: Tensor, params: ParamStore, prefix: str):
    """Input-dependent (delta, A, B, C) for a conv-activated sequence ``u[B,L,E]``."""
    delta = nc.softplus(u @ params[f"{prefix}.dt_proj.weight"] + params[f"{prefix}.dt_proj.bias"])
    A = -nc.exp(params[f"{prefix}.A_log"])
    Bsel = u @ params[f"{prefix}.B_proj.weight"]
    Csel = u @ params[f"{prefix}.C_proj.weight"]
    return delta, A, Bsel, Csel


def mamba_block(x: Tensor, params: ParamStore, prefix: str, cfg: MambaConfig,
                rng: np.random.Generator | None = None) -> Tensor:
    """``x[B,L,C]`` -> ``x + out_proj(scan(silu(conv(main))) * silu(gate))``."""
    if x.ndim != 3 or x.shape[-1] != cfg.d_model:
        raise ValueError(f"mamba_block expects (B, L, {cfg.d_model}), got {x.shape}")
    e = cfg.d_inner
    proj = x @ params[f"{prefix}.in_proj.weight"] + params[f"{prefix}.in_proj.bias"]
    main, gate = proj[..., :e], proj[..., e:]
    main = nc.depthwise_conv1d(main.transpose(0, 2, 1), params[f"{prefix}.conv.weight"],
                               params[f"{prefix}.conv.bias"]).transpose(0, 2, 1)
    main = nc.silu(main)
    delta, A, Bsel, Csel = ssm_inputs(main, params, prefix)
    y = selective_scan(main, delta, A, Bsel, Csel, params[f"{prefix}.D"])
    y = y * nc.silu(gate)
    out = y @ params[f"{prefix}.out_proj.weight"] + params[f"{prefix}.out_proj.bias"]
    return x + nc.dropout(out, cfg.dropout, rng)
