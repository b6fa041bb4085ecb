"""Short-time Fourier analysis of multichannel trajectories and LF/HF band splitting.

Signals are laid out ``[..., m, C]`` (time, channel); spectrograms are complex
``[..., C, F, W]`` with ``F = window // 2 + 1`` bins and ``W = m // hop``
frames. Edges are reflect-padded by ``(window - hop) // 2`` samples so that
the frame count is exactly ``m / hop``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, InvalidArgumentError

DEFAULT_WINDOW = 16
DEFAULT_HOP = 8
DEFAULT_B_SPLIT = 2


@dataclass(frozen=True)
class Spectrogram:
    data: np.ndarray  # complex [..., C, F, W]
    window: int
    hop: int
    length: int

    @property
    def n_bins(self) -> int:
        return self.data.shape[-2]

    @property
    def n_frames(self) -> int:
        return self.data.shape[-1]


@dataclass(frozen=True)
class SpectralBands:
    lf: Spectrogram
    hf: Spectrogram
    b_split: int


def hann(window: int) -> np.ndarray:
    n = np.arange(window)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / window)


def _pad_amount(window: int, hop: int) -> int:
    return (window - hop) // 2


def _check_params(m: int, window: int, hop: int):
    if window < 2 or hop < 1 or hop > window:
        raise InvalidArgumentError(f"bad frame parameters window={window}, hop={hop}")
    if m < window:
        raise InvalidArgumentError(f"signal length {m} shorter than window {window}")
    if m % hop:
        raise InvalidArgumentError(f"signal length {m} not divisible by hop {hop}")
    if (window - hop) % 2:
        raise InvalidArgumentError("window - hop must be even for symmetric padding")


def stft(values: np.ndarray, window: int = DEFAULT_WINDOW, hop: int = DEFAULT_HOP) -> Spectrogram:
    x = np.asarray(values, dtype=np.float64)
    if x.ndim < 2:
        raise InvalidArgumentError(f"expected [..., m, C] signal, got shape {x.shape}")
    m = x.shape[-2]
    _check_params(m, window, hop)
    p = _pad_amount(window, hop)
    xc = np.swapaxes(x, -1, -2)  # [..., C, m]
    if p:
        xc = np.pad(xc, [(0, 0)] * (xc.ndim - 1) + [(p, p)], mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(xc, window, axis=-1)[..., ::hop, :]
    spec = np.fft.rfft(frames * hann(window), axis=-1)  # [..., C, W, F]
    return Spectrogram(np.swapaxes(spec, -1, -2), window, hop, m)


@lru_cache(maxsize=8)
def _envelope(m: int, window: int, hop: int) -> np.ndarray:
    p = _pad_amount(window, hop)
    n_frames = m // hop
    env = np.zeros(m + 2 * p)
    w2 = hann(window) ** 2
    for t in range(n_frames):
        env[t * hop:t * hop + window] += w2
    return env


def istft(spec: Spectrogram) -> np.ndarray:
    """Weighted overlap-add inverse; returns ``[..., m, C]``."""
    window, hop, m = spec.window, spec.hop, spec.length
    _check_params(m, window, hop)
    W = spec.n_frames
    if W != m // hop or spec.n_bins != window // 2 + 1:
        raise InvalidArgumentError(
            f"spectrogram shape {spec.data.shape} inconsistent with m={m}, window={window}, hop={hop}")
    p = _pad_amount(window, hop)
    env = _envelope(m, window, hop)
    if np.any(env[p:p + m] < 1e-10):
        raise ConfigurationError(f"window {window} / hop {hop} leave uncovered samples")
    frames = np.fft.irfft(np.swapaxes(spec.data, -1, -2), n=window, axis=-1) * hann(window)
    lead = frames.shape[:-2]
    buf = np.zeros(lead + (m + 2 * p,))
    for t in range(W):
        buf[..., t * hop:t * hop + window] += frames[..., t, :]
    out = buf[..., p:p + m] / env[p:p + m]
    return np.swapaxes(out, -1, -2)


def split_bands(spec: Spectrogram, b_split: int = DEFAULT_B_SPLIT) -> SpectralBands:
    F = spec.n_bins
    if not 0 < b_split < F:
        raise InvalidArgumentError(f"b_split must be in (0, {F}), got {b_split}")
    lf = spec.data.copy()
    hf = spec.data.copy()
    lf[..., b_split:, :] = 0
    hf[..., :b_split, :] = 0
    mk = lambda d: Spectrogram(d, spec.window, spec.hop, spec.length)  # noqa: E731
    return SpectralBands(mk(lf), mk(hf), b_split)


def merge_bands(bands: SpectralBands) -> Spectrogram:
    lf, hf = bands.lf, bands.hf
    if lf.data.shape != hf.data.shape or (lf.window, lf.hop, lf.length) != (hf.window, hf.hop, hf.length):
        raise InvalidArgumentError(
            f"band shapes differ: {lf.data.shape} vs {hf.data.shape}")
    return Spectrogram(lf.data + hf.data, lf.window, lf.hop, lf.length)


def band_mask(n_bins: int, b_split: int, band: str) -> np.ndarray:
    """Boolean mask over frequency bins for ``band`` in {"lf", "hf"}."""
    k = np.arange(n_bins)
    if band == "lf":
        return k < b_split
    if band == "hf":
        return k >= b_split
    raise InvalidArgumentError(f"unknown band {band!r}")


# ----------------------------------------------------------------------------
# real-plane layout and linear operators for the autodiff engine
# ----------------------------------------------------------------------------

def to_planes(spec_data: np.ndarray) -> np.ndarray:
    """Complex ``[..., C, F, W]`` -> real ``[..., C, F, 2, W]`` (real, imag)."""
    return np.stack([spec_data.real, spec_data.imag], axis=-2)


def from_planes(planes: np.ndarray) -> np.ndarray:
    return planes[..., 0, :] + 1j * planes[..., 1, :]


@lru_cache(maxsize=8)
def istft_matrix(m: int, window: int = DEFAULT_WINDOW, hop: int = DEFAULT_HOP) -> np.ndarray:
    """Matrix ``M`` with ``signal = planes.reshape(F*2*W) @ M`` for one channel."""
    F, W = window // 2 + 1, m // hop
    n = F * 2 * W
    basis = np.eye(n).reshape(n, 1, F, 2, W)
    out = istft(Spectrogram(from_planes(basis), window, hop, m))  # [n, m, 1]
    return out[:, :, 0]


@lru_cache(maxsize=8)
def stft_matrix(m: int, window: int = DEFAULT_WINDOW, hop: int = DEFAULT_HOP) -> np.ndarray:
    """Matrix ``S`` with ``planes.reshape(F*2*W) = signal @ S`` for one channel."""
    basis = np.eye(m)[:, :, None]  # [m, m, 1]
    planes = to_planes(stft(basis, window, hop).data)  # [m, 1, F, 2, W]
    return planes.reshape(m, -1)


def parseval_energies(values: np.ndarray, window: int = DEFAULT_WINDOW,
                      hop: int = DEFAULT_HOP) -> tuple[float, float]:
    """(window-weighted signal energy, spectrogram energy) for a ``[m, C]`` signal.

    The time-domain side weights each padded sample by the overlap-added
    squared window; the spectral side folds the one-sided spectrum back to
    full length. The two agree exactly in exact arithmetic.
    """
    x = np.asarray(values, dtype=np.float64)
    m = x.shape[-2]
    spec = stft(x, window, hop)
    p = _pad_amount(window, hop)
    xc = np.swapaxes(x, -1, -2)
    if p:
        xc = np.pad(xc, [(0, 0)] * (xc.ndim - 1) + [(p, p)], mode="reflect")
    time_energy = float((xc ** 2 * _envelope(m, window, hop)).sum())
    mag2 = np.abs(spec.data) ** 2
    weight = np.full(spec.n_bins, 2.0)
    weight[0] = 1.0
    if window % 2 == 0:
        weight[-1] = 1.0
    spec_energy = float((mag2 * weight[:, None]).sum() / window)
    return time_energy, spec_energy
