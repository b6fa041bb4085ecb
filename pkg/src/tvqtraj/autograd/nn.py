"""Small layer library on top of the tensor engine."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Parameter container; parameters and sub-modules are discovered by attribute."""

    def named_parameters(self, prefix: str = "") -> "OrderedDict[str, Tensor]":
        out: OrderedDict[str, Tensor] = OrderedDict()
        for key in sorted(vars(self)):
            val = getattr(self, key)
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                out[name] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(name + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out[f"{name}.{i}"] = item
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self.named_parameters().items())

    def load_state_dict(self, state: dict, prefix: str = ""):
        params = self.named_parameters()
        missing = [k for k in params if prefix + k not in state]
        if missing:
            raise KeyError(f"missing parameters: {missing[:5]}")
        for k, p in params.items():
            arr = np.asarray(state[prefix + k])
            if arr.shape != p.shape:
                raise ValueError(f"{k}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.astype(p.data.dtype).copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def param(arr) -> Tensor:
    return Tensor(np.asarray(arr, dtype=T.get_dtype()), requires_grad=True)


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True,
                 init_std: float | None = None):
        if init_std is None:
            w = _uniform(rng, n_in, (n_in, n_out))
        else:
            w = rng.normal(0.0, init_std, size=(n_in, n_out))
        self.weight = param(w)
        self.bias = param(np.zeros(n_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, zero_init: bool = False):
        shape = (c_out, c_in, kernel)
        self.weight = param(np.zeros(shape) if zero_init else _uniform(rng, c_in * kernel, shape))
        self.bias = param(np.zeros(c_out))
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0):
        self.weight = param(_uniform(rng, c_in * kernel // max(stride, 1), (c_in, c_out, kernel)))
        self.bias = param(np.zeros(c_out))
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return T.conv_transpose1d(x, self.weight, self.bias, self.stride, self.padding)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.weight = param(np.ones(dim))
        self.bias = param(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.weight, self.bias)


class ChannelNorm(Module):
    """LayerNorm over the channel axis of a [B, C, L] tensor."""

    def __init__(self, channels: int):
        self.norm = LayerNorm(channels)

    def forward(self, x: Tensor) -> Tensor:
        return self.norm(x.transpose(0, 2, 1)).transpose(0, 2, 1)


class Embedding(Module):
    def __init__(self, n: int, dim: int, rng: np.random.Generator, std: float = 0.02):
        self.weight = param(rng.normal(0.0, std, size=(n, dim)))

    def forward(self, idx) -> Tensor:
        return T.embedding(self.weight, idx)


class ResBlock1d(Module):
    """x + conv(relu(conv(relu(x)))), length preserving."""

    def __init__(self, channels: int, rng: np.random.Generator, kernel: int = 3):
        self.conv1 = Conv1d(channels, channels, kernel, rng, padding=kernel // 2)
        self.conv2 = Conv1d(channels, channels, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv1(T.relu(x))
        h = self.conv2(T.relu(h))
        return x + h


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError("model dim must be divisible by head count")
        self.heads = heads
        self.qkv = Linear(dim, 3 * dim, rng)
        self.out = Linear(dim, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        B, L, D = x.shape
        H = self.heads
        dh = D // H
        qkv = self.qkv(x).reshape(B, L, 3, H, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        att = T.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
        att = T.softmax(att, axis=-1)
        y = T.matmul(att, v).transpose(0, 2, 1, 3).reshape(B, L, D)
        return self.out(y)


class TransformerBlock(Module):
    """Pre-norm bidirectional encoder block."""

    def __init__(self, dim: int, heads: int, ff: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.ln2 = LayerNorm(dim)
        self.ff1 = Linear(dim, ff, rng)
        self.ff2 = Linear(ff, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.ff2(T.gelu(self.ff1(self.ln2(x))))
