"""Random convolutional kernel features for multichannel series."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import InvalidArgumentError
from .rng import stream

KERNEL_LENGTHS = (7, 9, 11)


@dataclass(frozen=True)
class RocketKernels:
    weights: np.ndarray    # flat float64, kernel k occupies offsets[k]:offsets[k+1] as [C, length]
    offsets: np.ndarray
    lengths: np.ndarray
    biases: np.ndarray
    dilations: np.ndarray
    paddings: np.ndarray
    n_channels: int
    series_length: int

    @property
    def count(self) -> int:
        return len(self.lengths)


def make_kernels(n_kernels: int, n_channels: int, series_length: int, seed: int) -> RocketKernels:
    if n_kernels < 1:
        raise InvalidArgumentError(f"kernel count must be >= 1, got {n_kernels}")
    rng = stream(seed, "rocket")
    lengths = rng.choice(KERNEL_LENGTHS, size=n_kernels).astype(np.int64)
    offsets = np.concatenate([[0], np.cumsum(lengths * n_channels)]).astype(np.int64)
    weights = np.empty(offsets[-1])
    biases = np.empty(n_kernels)
    dilations = np.empty(n_kernels, dtype=np.int64)
    paddings = np.empty(n_kernels, dtype=np.int64)
    for k, length in enumerate(lengths):
        w = rng.normal(0.0, 1.0, size=(n_channels, length))
        w -= w.mean(axis=1, keepdims=True)
        weights[offsets[k]:offsets[k + 1]] = w.ravel()
        biases[k] = rng.uniform(-1.0, 1.0)
        top = np.log2(max((series_length - 1) / (length - 1), 1.0))
        dilations[k] = int(2.0 ** rng.uniform(0.0, top))
        paddings[k] = ((length - 1) * dilations[k]) // 2 if rng.integers(2) else 0
    return RocketKernels(weights, offsets, lengths, biases, dilations, paddings,
                         n_channels, series_length)


@numba.njit(cache=True)
def _transform(X, weights, offsets, lengths, biases, dilations, paddings):
    n, C, L = X.shape
    K = lengths.shape[0]
    out = np.zeros((n, 2 * K))
    buf = np.empty(L + 2 * int(paddings.max()) + 1)
    for i in range(n):
        for k in range(K):
            length, dil, pad = lengths[k], dilations[k], paddings[k]
            w0 = offsets[k]
            n_out = L + 2 * pad - (length - 1) * dil
            if n_out <= 0:
                continue
            for t in range(n_out):
                buf[t] = biases[k]
            for j in range(length):
                off = j * dil - pad
                t_lo = max(0, -off)
                t_hi = min(n_out, L - off)
                for c in range(C):
                    w = weights[w0 + c * length + j]
                    for t in range(t_lo, t_hi):
                        buf[t] += w * X[i, c, t + off]
            positive = 0
            best = -np.inf
            for t in range(n_out):
                v = buf[t]
                if v > 0:
                    positive += 1
                if v > best:
                    best = v
            out[i, 2 * k] = positive / n_out
            out[i, 2 * k + 1] = best
    return out


def rocket_features(trajs: np.ndarray, kernels: RocketKernels | int = 500, seed: int = 0) -> np.ndarray:
    """``[n, m, C]`` series -> ``[n, 2 * kernels]`` (PPV, max) features."""
    x = np.asarray(trajs, dtype=np.float64)
    if x.ndim != 3:
        raise InvalidArgumentError(f"expected [n, m, C] series, got {x.shape}")
    if isinstance(kernels, int):
        kernels = make_kernels(kernels, x.shape[2], x.shape[1], seed)
    if kernels.n_channels != x.shape[2]:
        raise InvalidArgumentError(
            f"kernels built for {kernels.n_channels} channels, got {x.shape[2]}")
    X = np.ascontiguousarray(np.swapaxes(x, 1, 2))
    return _transform(X, kernels.weights, kernels.offsets, kernels.lengths, kernels.biases,
                      kernels.dilations, kernels.paddings)
