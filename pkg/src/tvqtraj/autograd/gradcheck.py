"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, precision


def numeric_grad(f: Callable[[], Tensor], x: Tensor, h: float = 1e-3) -> np.ndarray:
    g = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(f().data)
        flat[i] = old - h
        fm = float(f().data)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def check_grad(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-3,
               rtol: float = 1e-3, atol: float = 1e-5) -> float:
    """Compare analytic and central-difference gradients of scalar ``f``.

    Runs in float64. Returns the worst ``|a - n| / max(|n|, atol/rtol)`` ratio;
    raises AssertionError when any entry exceeds ``rtol`` relative with an
    ``atol`` absolute floor.
    """
    with precision(np.float64):
        for x in inputs:
            x.data = x.data.astype(np.float64)
            x.grad = None
        out = f()
        backward(out)
        worst = 0.0
        for k, x in enumerate(inputs):
            analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
            num = numeric_grad(f, x, h)
            err = np.abs(analytic - num)
            tol = np.maximum(rtol * np.abs(num), atol)
            if np.any(err > tol):
                i = int(np.argmax(err - tol))
                raise AssertionError(
                    f"input {k}: analytic {analytic.reshape(-1)[i]:.6g} vs numeric "
                    f"{num.reshape(-1)[i]:.6g}")
            worst = max(worst, float(np.max(err / np.maximum(np.abs(num), atol / rtol))))
    return worst
