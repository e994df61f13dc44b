"""Dense tensors with reverse-mode differentiation on top of numpy.

A :class:`Tensor` wraps an ``ndarray`` and, when produced by a differentiable
op from inputs that require gradients, remembers its parents together with a
closure mapping the output gradient to one gradient per parent.  The graph is
implicit in those links; :func:`backward` walks it once in reverse topological
order.

Heavy primitives (convolutions, layer norm, softmax) are single fused nodes
with hand-written backward rules so that graphs stay small.
"""
from __future__ import annotations

import contextlib
import hashlib
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "Tensor", "ParamStore", "NonFiniteError", "precision", "get_dtype",
    "no_grad", "debug_mode", "make_op", "backward", "grad_check",
    "add", "sub", "mul", "div", "neg", "matmul", "exp", "log", "sqrt",
    "tanh", "sigmoid", "silu", "softplus", "relu", "sum_", "mean",
    "reshape", "transpose", "concat", "take_rows", "conv2d",
    "depthwise_conv1d", "layer_norm", "softmax", "log_softmax", "dropout",
    "splitmix_uniform",
]


class NonFiniteError(FloatingPointError):
    """Raised in debug mode when an op produces NaN or Inf."""


_STATE = {"dtype": np.float32, "grad": True, "debug": False}


def get_dtype():
    return _STATE["dtype"]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for newly created tensors."""
    old = _STATE["dtype"]
    _STATE["dtype"] = np.dtype(dtype).type
    try:
        yield
    finally:
        _STATE["dtype"] = old


@contextlib.contextmanager
def no_grad():
    old = _STATE["grad"]
    _STATE["grad"] = False
    try:
        yield
    finally:
        _STATE["grad"] = old


@contextlib.contextmanager
def debug_mode(enabled: bool = True):
    """Check every op output for non-finite values while active."""
    old = _STATE["debug"]
    _STATE["debug"] = enabled
    try:
        yield
    finally:
        _STATE["debug"] = old


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(get_dtype())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.name = name

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=get_dtype()))


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op result, recording ``backward_fn`` when any parent needs grads.

    ``backward_fn(grad)`` must return one gradient (or None) per parent.
    """
    out = Tensor(data)
    if _STATE["debug"] and not np.all(np.isfinite(out.data)):
        raise NonFiniteError(f"non-finite value produced by {backward_fn.__qualname__}")
    if _STATE["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return make_op(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return make_op(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return make_op(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))
    return make_op(out, (a, b), bw)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return make_op(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    return make_op(a.data ** exponent, (a,),
                   lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    return make_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)
    return make_op(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = _sigmoid(a.data)
    return make_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def silu(a) -> Tensor:
    a = _as_tensor(a)
    s = _sigmoid(a.data)
    out = a.data * s
    return make_op(out, (a,), lambda g: (g * (s + out * (1.0 - s)),))


def softplus(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    return make_op(out, (a,), lambda g: (g * _sigmoid(x),))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return make_op(a.data * mask, (a,), lambda g: (g * mask,))


# -- reductions and data movement -----------------------------------------

def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return make_op(np.asarray(out), (a,), bw)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return sum_(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a, idx) -> Tensor:
    a = _as_tensor(a)
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(p, (int, slice)) or p is Ellipsis or p is None for p in parts)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)
    return make_op(a.data[idx], (a,), bw)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    return make_op(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                   lambda g: tuple(np.split(g, bounds, axis=axis)))


def take_rows(table, ids) -> Tensor:
    """Embedding lookup: ``table[ids]`` with scatter-add backward."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)
    return make_op(table.data[ids], (table,), bw)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs ≥2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb
    if a.ndim == 2 and b.ndim == 2:
        # a stack of row-vector products: each row's result is independent of its position
        out = np.matmul(a.data[:, None, :], b.data)[:, 0, :]
    else:
        out = a.data @ b.data
    return make_op(out, (a, b), bw)


# -- fused primitives ------------------------------------------------------

def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


def conv2d(x, w, bias=None, stride=1, pad=0) -> Tensor:
    """Cross-correlation of ``x[B,Cin,H,W]`` with ``w[Cout,Cin,kh,kw]``."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d shape mismatch: x{x.shape} w{w.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    B, _, H, W = x.shape
    cout, cin, kh, kw = w.shape
    span_h, span_w = H + 2 * ph - kh, W + 2 * pw - kw
    if span_h < 0 or span_w < 0:
        raise ValueError(f"kernel {kh}x{kw} does not fit padded input {H + 2 * ph}x{W + 2 * pw}")
    if span_h % sh or span_w % sw:
        raise ValueError(f"non-integral conv2d output size for input {H}x{W}, "
                         f"kernel {kh}x{kw}, stride {sh}x{sw}, pad {ph}x{pw}")
    ho, wo = span_h // sh + 1, span_w // sw + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    cols = cols[:, :, ::sh, ::sw]  # B,Cin,Ho,Wo,kh,kw
    # one GEMM per sample so a clip's output never depends on its batch position
    patches = np.ascontiguousarray(cols.transpose(0, 2, 3, 1, 4, 5)).reshape(B, ho * wo, -1)
    out = np.matmul(patches, w.data.reshape(cout, -1).T)  # B,Ho*Wo,Cout
    out = out.transpose(0, 2, 1).reshape(B, cout, ho, wo)
    parents = [x, w]
    if bias is not None:
        bias = _as_tensor(bias)
        out = out + bias.data.reshape(1, -1, 1, 1)
        parents.append(bias)

    def bw(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))  # Cout,Cin,kh,kw
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(g, w.data[:, :, i, j], axes=([1], [0]))  # B,Ho,Wo,Cin
                gxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += contrib.transpose(0, 3, 1, 2)
        gx = gxp[:, :, ph:ph + H, pw:pw + W]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)
    return make_op(np.ascontiguousarray(out), parents, bw)


def depthwise_conv1d(x, w, bias=None) -> Tensor:
    """Causal per-channel convolution of ``x[B,C,L]`` with ``w[C,k]``.

    The input is left-padded with ``k-1`` zeros; tap ``k-1`` multiplies the
    current sample.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 3 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"depthwise_conv1d shape mismatch: x{x.shape} w{w.shape}")
    k = w.shape[1]
    if k < 1:
        raise ValueError("kernel size must be ≥ 1")
    L = x.shape[2]
    xp = np.pad(x.data, ((0, 0), (0, 0), (k - 1, 0)))
    out = np.zeros(x.shape, dtype=np.result_type(x.data, w.data))
    for j in range(k):
        out += xp[:, :, j:j + L] * w.data[None, :, j, None]
    parents = [x, w]
    if bias is not None:
        bias = _as_tensor(bias)
        out += bias.data[None, :, None]
        parents.append(bias)

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w.data)
        for j in range(k):
            gxp[:, :, j:j + L] += g * w.data[None, :, j, None]
            gw[:, j] = (g * xp[:, :, j:j + L]).sum(axis=(0, 2))
        grads = [gxp[:, :, k - 1:], gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)
    return make_op(out, parents, bw)


def layer_norm(x, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, no affine."""
    x = _as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gxm = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gxm),)
    return make_op(xhat, (x,), bw)


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return make_op(out, (x,),
                   lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return make_op(out, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def dropout(x, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None (eval mode) or rate is 0."""
    x = _as_tensor(x)
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return make_op(x.data * keep, (x,), lambda g: (g * keep,))


# -- backward --------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, leaves: Iterable[Tensor] | None = None) -> list[np.ndarray] | None:
    """Backpropagate from a scalar ``loss``.

    Gradients are summed over all paths and stored on every reached leaf's
    ``.grad``.  If ``leaves`` is given, their gradients are also returned in
    order, with zeros for leaves the loss does not depend on.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    if leaves is None:
        return None
    return [np.zeros_like(t.data) if t.grad is None else t.grad for t in leaves]


# -- parameters ------------------------------------------------------------

_MASK64 = (1 << 64) - 1


def _name_key(seed: int, name: str) -> int:
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return (int.from_bytes(digest, "little") ^ (seed * 0x9E3779B97F4A7C15)) & _MASK64


def splitmix_uniform(seed: int, name: str, n: int) -> np.ndarray:
    """``n`` floats in [0, 1) from a splitmix64 stream keyed by (seed, name)."""
    gamma = np.uint64(0x9E3779B97F4A7C15)
    z = np.uint64(_name_key(seed, name)) + gamma * np.arange(1, n + 1, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) / float(1 << 53)


class ParamStore:
    """Named trainable tensors, iterated in lexicographic name order."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._params: dict[str, Tensor] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self.names())

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> list[tuple[str, Tensor]]:
        return [(n, self._params[n]) for n in self.names()]

    def tensors(self) -> list[Tensor]:
        return [self._params[n] for n in self.names()]

    def set(self, name: str, value, dtype=None) -> Tensor:
        arr = np.array(value, dtype=dtype or get_dtype())
        t = Tensor(arr, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def add(self, name: str, value, dtype=None) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        return self.set(name, value, dtype)

    def uniform(self, name: str, shape: tuple, fan_in: int) -> Tensor:
        bound = np.sqrt(1.0 / max(fan_in, 1))
        u = splitmix_uniform(self.seed, name, int(np.prod(shape)))
        return self.add(name, ((2.0 * u - 1.0) * bound).reshape(shape))

    def zeros(self, name: str, shape: tuple) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple) -> Tensor:
        return self.add(name, np.ones(shape))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: self._params[n].data for n in self.names()}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], seed: int = 0, dtype=None) -> "ParamStore":
        store = cls(seed)
        for name in sorted(arrays):
            store.set(name, arrays[name], dtype)
        return store

    def astype(self, dtype) -> "ParamStore":
        return ParamStore.from_arrays(self.state_dict(), self.seed, dtype)

    def copy(self) -> "ParamStore":
        return ParamStore.from_arrays({n: a.copy() for n, a in self.state_dict().items()},
                                      self.seed, None)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None


def grad_check(f: Callable[[ParamStore], Tensor], params: ParamStore, eps: float = 1e-6,
               names: Sequence[str] | None = None, max_entries: int | None = None,
               seed: int = 0, return_details: bool = False):
    """Largest relative error between backward gradients and central differences.

    The error per scalar is ``|a - n| / max(1, |a|, |n|)``.  ``max_entries``
    caps the number of probed scalars per parameter (chosen by a seeded RNG).
    Expects ``params`` in float64.
    """
    names = list(names or params.names())
    params.zero_grad()
    loss = f(params)
    analytic = backward(loss, [params[n] for n in names])
    rng = np.random.default_rng(seed)
    worst, details = 0.0, {}
    for name, ga in zip(names, analytic):
        t = params[name]
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        err = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(params).data)
            flat[i] = orig - eps
            fm = float(f(params).data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"non-finite loss while perturbing {name}[{i}]")
            num = (fp - fm) / (2 * eps)
            a = float(ga.reshape(-1)[i])
            err = max(err, abs(a - num) / max(1.0, abs(a), abs(num)))
        details[name] = err
        worst = max(worst, err)
    params.zero_grad()
    return (worst, details) if return_details else worst
