"""Define-by-run reverse-mode autodiff over numpy arrays.

Every op returns a new :class:`Tensor` holding references to its parents and
a closure that maps the output gradient to parent gradients. ``backward``
walks the graph in reverse topological order, visiting each node once.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from ..errors import InvalidArgumentError

_DTYPE = [np.float32]


def get_dtype():
    return _DTYPE[-1]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the engine's real dtype (float64 for gradient checks)."""
    _DTYPE.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DTYPE.pop()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None):
        self.data = np.asarray(data, dtype=get_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], fn: Callable) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=fn)


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise InvalidArgumentError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def backward(loss: Tensor):
    """Populate ``.grad`` on every tensor reachable from scalar ``loss``."""
    if loss.data.size != 1:
        raise InvalidArgumentError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            if node._parents:
                # intermediate buffers are no longer needed
                node.grad = None if node is not loss else node.grad


# ----------------------------------------------------------------------------
# elementwise
# ----------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def fn(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))
    return _make(a.data + b.data, (a, b), fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def fn(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))
    return _make(a.data - b.data, (a, b), fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def fn(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))
    return _make(a.data * b.data, (a, b), fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def fn(g):
        _accum(x, g * mask)
    return _make(x.data * mask, (x,), fn)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh approximation of GELU."""
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v ** 3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def fn(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v ** 2)
        d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t ** 2) * dinner
        _accum(x, g * d)
    return _make(out, (x,), fn)


def sqrt(x: Tensor, eps: float = 0.0) -> Tensor:
    out = np.sqrt(x.data + eps)

    def fn(g):
        _accum(x, g * 0.5 / out)
    return _make(out, (x,), fn)


def square(x: Tensor) -> Tensor:
    def fn(g):
        _accum(x, g * 2.0 * x.data)
    return _make(x.data * x.data, (x,), fn)


def straight_through(pre_quant: Tensor, quantized) -> Tensor:
    """Forward value of ``quantized``; identity Jacobian back to ``pre_quant``."""
    q = quantized.data if isinstance(quantized, Tensor) else np.asarray(quantized)
    if q.shape != pre_quant.shape:
        raise InvalidArgumentError(
            f"straight_through: shape mismatch {pre_quant.shape} vs {q.shape}")

    def fn(g):
        _accum(pre_quant, g)
    return _make(q.astype(get_dtype()), (pre_quant,), fn)


def stop_gradient(x: Tensor) -> Tensor:
    return Tensor(x.data)


# ----------------------------------------------------------------------------
# linear algebra
# ----------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise InvalidArgumentError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise InvalidArgumentError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def fn(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            if a.ndim > 2 and b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
            _accum(b, gb)
    return _make(out, (a, b), fn)


def _pad_last(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, [(0, 0)] * (x.ndim - 1) + [(padding, padding)])


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` [B, Cin, L] with ``w`` [Cout, Cin, K]."""
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise InvalidArgumentError(f"conv1d: incompatible shapes {x.shape} and {w.shape}")
    B, cin, L = x.shape
    cout, _, K = w.shape
    xp = _pad_last(x.data, padding)
    Lp = L + 2 * padding
    if Lp < K:
        raise InvalidArgumentError(f"conv1d: input {x.shape} shorter than kernel {w.shape}")
    lout = (Lp - K) // stride + 1
    # windows: [B, Cin, Lout, K]
    win = np.lib.stride_tricks.sliding_window_view(xp, K, axis=2)[:, :, ::stride, :][:, :, :lout]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B * lout, cin * K)
    wmat = w.data.reshape(cout, cin * K)
    out = (cols @ wmat.T).reshape(B, lout, cout).transpose(0, 2, 1)
    if b is not None:
        out = out + b.data[None, :, None]
    parents = (x, w) if b is None else (x, w, b)

    def fn(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(B * lout, cout)
        if w.requires_grad:
            _accum(w, (g2.T @ cols).reshape(cout, cin, K))
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=(0, 2)))
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(B, lout, cin, K)
            gxp = np.zeros((B, cin, Lp), dtype=g.dtype)
            span = stride * (lout - 1) + 1
            for k in range(K):
                gxp[:, :, k:k + span:stride] += gcols[:, :, :, k].transpose(0, 2, 1)
            _accum(x, gxp[:, :, padding:padding + L] if padding else gxp)
    return _make(np.ascontiguousarray(out), parents, fn)


def conv_transpose1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
                     padding: int = 0) -> Tensor:
    """Transposed convolution; ``w`` is [Cin, Cout, K]. Output length
    ``(L - 1) * stride - 2 * padding + K``."""
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[0]:
        raise InvalidArgumentError(
            f"conv_transpose1d: incompatible shapes {x.shape} and {w.shape}")
    B, cin, L = x.shape
    _, cout, K = w.shape
    full = (L - 1) * stride + K
    lout = full - 2 * padding
    if lout <= 0:
        raise InvalidArgumentError(f"conv_transpose1d: empty output for {x.shape}, {w.shape}")
    xt = np.ascontiguousarray(x.data.transpose(0, 2, 1)).reshape(B * L, cin)
    wmat = w.data.reshape(cin, cout * K)
    contrib = (xt @ wmat).reshape(B, L, cout, K)
    yfull = np.zeros((B, cout, full), dtype=contrib.dtype)
    span = stride * (L - 1) + 1
    for k in range(K):
        yfull[:, :, k:k + span:stride] += contrib[:, :, :, k].transpose(0, 2, 1)
    out = yfull[:, :, padding:padding + lout]
    if b is not None:
        out = out + b.data[None, :, None]
    parents = (x, w) if b is None else (x, w, b)

    def fn(g):
        gfull = np.zeros((B, cout, full), dtype=g.dtype)
        gfull[:, :, padding:padding + lout] = g
        # gather [B, L, Cout, K]
        gc = np.empty((B, L, cout, K), dtype=g.dtype)
        for k in range(K):
            gc[:, :, :, k] = gfull[:, :, k:k + span:stride].transpose(0, 2, 1)
        gc2 = gc.reshape(B * L, cout * K)
        if w.requires_grad:
            _accum(w, (xt.T @ gc2).reshape(cin, cout, K))
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=(0, 2)))
        if x.requires_grad:
            _accum(x, (gc2 @ wmat.T).reshape(B, L, cin).transpose(0, 2, 1))
    return _make(np.ascontiguousarray(out), parents, fn)


# ----------------------------------------------------------------------------
# normalisation / probability
# ----------------------------------------------------------------------------

def layer_norm(x: Tensor, weight: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply the optional affine map."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if weight is not None:
        out = out * weight.data
    if bias is not None:
        out = out + bias.data
    parents = tuple(p for p in (x, weight, bias) if p is not None)
    n = x.shape[-1]

    def fn(g):
        if bias is not None and bias.requires_grad:
            _accum(bias, _unbroadcast(g, bias.shape))
        if weight is not None and weight.requires_grad:
            _accum(weight, _unbroadcast(g * xhat, weight.shape))
        if x.requires_grad:
            gh = g * weight.data if weight is not None else g
            gx = inv / n * (n * gh - gh.sum(axis=-1, keepdims=True)
                            - xhat * (gh * xhat).sum(axis=-1, keepdims=True))
            _accum(x, gx)
    return _make(out, parents, fn)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        _accum(x, s * (g - (g * s).sum(axis=axis, keepdims=True)))
    return _make(s, (x,), fn)


def log_softmax_np(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under ``logits``.

    ``logits`` is [..., V]; ``weights`` (same shape as targets) selects and
    weights positions, and the mean is taken over their sum.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise InvalidArgumentError(
            f"cross_entropy: logits {logits.shape} do not match targets {targets.shape}")
    V = logits.shape[-1]
    flat = logits.data.reshape(-1, V)
    t = targets.reshape(-1)
    if t.size and (t.min() < 0 or t.max() >= V):
        raise InvalidArgumentError(f"cross_entropy: target outside 0..{V - 1}")
    w = np.ones(t.shape, dtype=flat.dtype) if weights is None else \
        np.asarray(weights, dtype=flat.dtype).reshape(-1)
    denom = w.sum()
    if denom <= 0:
        raise InvalidArgumentError("cross_entropy: no positions selected")
    logp = log_softmax_np(flat)
    nll = -logp[np.arange(t.size), t]
    out = np.asarray((nll * w).sum() / denom, dtype=flat.dtype)

    def fn(g):
        p = np.exp(logp)
        p[np.arange(t.size), t] -= 1.0
        _accum(logits, (g * p * (w / denom)[:, None]).reshape(logits.shape))
    return _make(out, (logits,), fn)


def mse(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    d = a.data - b.data
    n = d.size
    out = np.asarray((d * d).sum() / n, dtype=d.dtype)

    def fn(g):
        gd = g * 2.0 * d / n
        _accum(a, gd)
        _accum(b, -gd)
    return _make(out, (a, b), fn)


# ----------------------------------------------------------------------------
# indexing / shape
# ----------------------------------------------------------------------------

def embedding(weight: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    V = weight.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= V):
        raise InvalidArgumentError(f"embedding: index outside 0..{V - 1}")

    def fn(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, idx.reshape(-1), g.reshape(-1, weight.shape[1]))
        _accum(weight, gw)
    return _make(weight.data[idx], (weight,), fn)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise InvalidArgumentError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from None

    def fn(g):
        _accum(x, g.reshape(x.shape))
    return _make(out, (x,), fn)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = np.argsort(axes)

    def fn(g):
        _accum(x, g.transpose(inv))
    return _make(x.data.transpose(axes), (x,), fn)


def getitem(x: Tensor, idx) -> Tensor:
    out = x.data[idx]

    parts = idx if isinstance(idx, tuple) else (idx,)
    fancy = any(isinstance(p, (np.ndarray, list)) for p in parts)

    def fn(g):
        gx = np.zeros_like(x.data)
        if fancy:
            np.add.at(gx, idx, g)
        else:
            gx[idx] += g
        _accum(x, gx)
    return _make(np.array(out), (x,), fn)


slice_ = getitem


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise InvalidArgumentError(
            f"concat: incompatible shapes {[x.shape for x in xs]} on axis {axis}") from None
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def fn(g):
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if x.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accum(x, g[tuple(sl)])
    return _make(out, xs, fn)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.shape))
    return _make(np.asarray(out), (x,), fn)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    out = x.data.mean(axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g / n, x.shape))
    return _make(np.asarray(out), (x,), fn)
