"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingError
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray | None],
              state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update. Returns new parameter arrays; ``state`` is updated in place.

    A non-finite gradient aborts the whole step before anything is modified.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        upd = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        out[name] = (p - upd).astype(p.dtype)
    return out, state


class Adam:
    """Stateful wrapper binding :func:`adam_step` to a set of named tensors."""

    def __init__(self, named_params: dict[str, Tensor], lr: float = 1e-3,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = dict(named_params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self):
        arrays = {k: p.data for k, p in self.params.items()}
        grads = {k: p.grad for k, p in self.params.items()}
        new, _ = adam_step(arrays, grads, self.state)
        for k, p in self.params.items():
            p.data = new[k]

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
