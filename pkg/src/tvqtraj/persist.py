"""Save and load datasets and models through the TVQV container.

Structured metadata (configs, normalisation bounds, flight ids) travels as a
JSON document stored byte-per-value in the ``meta.json`` entry, which keeps
float64 configuration values exact even though arrays are float32.
"""
from __future__ import annotations

import json
from dataclasses import asdict

import numpy as np

from . import container
from .enhancer import EnhancerNet, FcnClassifier
from .errors import ConfigurationError
from .prior import PriorConfig, PriorModel
from .trajdata import Dataset, NormStats
from .vqvae import VQConfig, VQVAE

META = "meta.json"


def pack_json(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode("utf-8"), dtype=np.uint8).astype(np.float32)


def unpack_json(arr: np.ndarray):
    return json.loads(np.asarray(arr).astype(np.uint8).tobytes().decode("utf-8"))


def _read(path, kind: str) -> tuple[dict, dict]:
    try:
        entries = container.read(path)
    except FileNotFoundError:
        raise ConfigurationError(f"{kind} file not found: {path}") from None
    if META not in entries:
        raise ConfigurationError(f"{path}: no metadata entry")
    meta = unpack_json(entries.pop(META))
    if meta.get("kind") != kind:
        raise ConfigurationError(f"{path}: holds a {meta.get('kind')!r}, expected {kind!r}")
    return meta, entries


def _write(path, kind: str, meta: dict, arrays: dict) -> None:
    container.write(path, {META: pack_json({"kind": kind, **meta}), **arrays})


# ---------------------------------------------------------------- datasets

def save_dataset(path, ds: Dataset, val_mask: np.ndarray | None = None) -> None:
    """Store a dataset; ``val_mask`` marks held-out rows (default: none)."""
    mask = np.zeros(ds.n, dtype=np.uint8) if val_mask is None else np.asarray(val_mask, dtype=np.uint8)
    if mask.shape != (ds.n,):
        raise ConfigurationError(f"split mask has shape {mask.shape}, expected ({ds.n},)")
    meta = {"n_classes": int(ds.n_classes), "flight_ids": [str(f) for f in ds.flight_ids],
            "norm_min": [float(v) for v in ds.norm.minimum], "norm_max": [float(v) for v in ds.norm.maximum]}
    _write(path, "dataset", meta, {"values": ds.values, "labels": ds.labels, "split": mask})


def load_dataset(path, part: str = "all") -> Dataset:
    """Load a dataset, or only its ``train`` / ``val`` rows."""
    if part not in ("all", "train", "val"):
        raise ConfigurationError(f"part must be all, train or val, got {part!r}")
    meta, e = _read(path, "dataset")
    norm = NormStats(np.array(meta["norm_min"]), np.array(meta["norm_max"]))
    ds = Dataset(e["values"], e["labels"].astype(np.int64), norm, meta["n_classes"], meta["flight_ids"])
    if part == "all":
        return ds
    is_val = e.get("split", np.zeros(ds.n)).astype(bool)
    rows = np.flatnonzero(is_val if part == "val" else ~is_val)
    if len(rows) == 0:
        raise ConfigurationError(f"{path}: the {part} part is empty")
    return ds.subset(rows)


def save_norm(path, norm: NormStats) -> None:
    _write(path, "norm", {"norm_min": [float(v) for v in norm.minimum],
                          "norm_max": [float(v) for v in norm.maximum]}, {})


def load_norm(path) -> NormStats:
    """Normalisation bounds from either a dataset or a standalone norm file."""
    entries = container.read(path)
    meta = unpack_json(entries[META])
    return NormStats(np.array(meta["norm_min"]), np.array(meta["norm_max"]))


# ---------------------------------------------------------------- models

def save_vqvae(path, model: VQVAE) -> None:
    _write(path, "stage1", {"config": asdict(model.config)}, model.full_state())


def load_vqvae(path) -> VQVAE:
    meta, e = _read(path, "stage1")
    model = VQVAE(VQConfig(**meta["config"]))
    model.load_full_state(e)
    return model


def save_prior(path, model: PriorModel) -> None:
    _write(path, "stage2", {"config": asdict(model.config)}, model.state_dict())


def load_prior(path) -> PriorModel:
    meta, e = _read(path, "stage2")
    model = PriorModel(PriorConfig(**meta["config"]))
    model.load_state_dict(e)
    return model


def save_fcn(path, model: FcnClassifier, accuracy: float | None = None) -> None:
    meta = {"n_classes": model.n_classes, "in_channels": model.in_channels, "accuracy": accuracy}
    _write(path, "fcn", meta, model.state_dict())


def load_fcn(path) -> FcnClassifier:
    meta, e = _read(path, "fcn")
    model = FcnClassifier(meta["n_classes"], in_channels=meta["in_channels"])
    model.load_state_dict(e)
    return model


def save_enhancer(path, model: EnhancerNet) -> None:
    _write(path, "stage3", {"hidden": model.hidden, "kernel": model.kernel}, model.state_dict())


def load_enhancer(path) -> EnhancerNet:
    meta, e = _read(path, "stage3")
    model = EnhancerNet(hidden=meta["hidden"], kernel=meta["kernel"])
    model.load_state_dict(e)
    return model
