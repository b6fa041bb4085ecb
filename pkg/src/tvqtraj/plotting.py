"""SVG figures for the evaluation, flyability and training reports.

Output is deterministic: a fixed SVG hash salt and no date metadata, so the
same data always produces the same bytes.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .trajdata import CHANNELS  # noqa: E402

_RC = {"svg.hashsalt": "tvqtraj", "svg.fonttype": "none", "figure.dpi": 100}


def _save(fig, path) -> Path:
    path = Path(path)
    with matplotlib.rc_context(_RC):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def pca_scatter(pca, path) -> Path:
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.scatter(pca.real[:, 0], pca.real[:, 1], s=8, alpha=0.6, label="real")
        ax.scatter(pca.gen[:, 0], pca.gen[:, 1], s=8, alpha=0.6, label="synthetic")
        ax.set_xlabel(f"PC1 ({pca.explained[0]:.1%})")
        ax.set_ylabel(f"PC2 ({pca.explained[1]:.1%})" if len(pca.explained) > 1 else "PC2")
        ax.legend()
    return _save(fig, path)


def bands(real_bands, gen_bands, path) -> Path:
    """Mean and spread per channel; each ``*_bands`` is ``(mean, lo, hi)`` of shape [m, C]."""
    n_ch = real_bands[0].shape[1]
    with matplotlib.rc_context(_RC):
        fig, axes = plt.subplots(n_ch, 1, figsize=(6, 2 * n_ch), sharex=True)
        axes = np.atleast_1d(axes)
        t = np.arange(real_bands[0].shape[0])
        for c, ax in enumerate(axes):
            for (mean, lo, hi), name in ((real_bands, "real"), (gen_bands, "synthetic")):
                ax.plot(t, mean[:, c], label=name)
                ax.fill_between(t, lo[:, c], hi[:, c], alpha=0.25)
            ax.set_ylabel(CHANNELS[c] if c < len(CHANNELS) else f"ch{c}")
        axes[0].legend()
        axes[-1].set_xlabel("time step")
    return _save(fig, path)


def heatmap(matrix, labels, path, title: str = "") -> Path:
    m = np.asarray(matrix, dtype=np.float64)
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(1 + 0.6 * len(labels), 0.8 + 0.6 * len(labels)))
        im = ax.imshow(np.ma.masked_invalid(m), vmin=-1, vmax=1, cmap="coolwarm")
        ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right")
        ax.set_yticks(range(len(labels)), labels)
        for i in range(m.shape[0]):
            for j in range(m.shape[1]):
                ax.text(j, i, "n/a" if np.isnan(m[i, j]) else f"{m[i, j]:.2f}", ha="center", va="center",
                        fontsize=7)
        fig.colorbar(im, ax=ax)
        ax.set_title(title)
        fig.tight_layout()
    return _save(fig, path)


def durations(real, gen, path) -> Path:
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for d, name in ((real, "real"), (gen, "synthetic")):
            ax.stairs(d.counts, d.edges, label=f"{name} (median {d.median:.0f} s)")
        ax.set_xlabel("duration (s)")
        ax.set_ylabel("count")
        ax.legend()
    return _save(fig, path)


def percentile_curves(levels, table, names, path, unit: str) -> Path:
    """One curve per metric: value against percentile, log-scaled where positive."""
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        for i, name in enumerate(names):
            ax.plot(levels, table[:, i], label=name)
        if np.all(np.asarray(table) > 0):
            ax.set_yscale("log")
        ax.set_xlabel("percentile")
        ax.set_ylabel(f"distance ({unit})")
        ax.legend(fontsize=7, ncol=2)
    return _save(fig, path)


def loss_curve(history: dict[str, np.ndarray], path) -> Path:
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for name, vals in history.items():
            ax.plot(np.arange(1, len(vals) + 1), vals, label=name)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        if all(np.all(np.asarray(v) > 0) for v in history.values()):
            ax.set_yscale("log")
        ax.legend()
    return _save(fig, path)
