"""Synthetic smooth trajectory families for demos and end-to-end checks."""
from __future__ import annotations

import numpy as np

from .rng import stream
from .trajdata import Dataset, normalize


def family_trajectory(family: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """One raw ``[m, 4]`` trajectory (lat deg, lon deg, alt ft, seconds since departure)."""
    t = np.linspace(0.0, 1.0, m)
    duration = rng.uniform(3000.0, 4200.0)
    j = lambda s: rng.normal(0.0, s)  # noqa: E731
    if family % 2 == 0:
        # north-east climb-cruise-descend along a gentle arc
        lat = 48.0 + j(0.1) + (3.0 + j(0.1)) * t
        lon = 2.0 + j(0.1) + (4.0 + j(0.1)) * t + (0.5 + j(0.05)) * np.sin(np.pi * t)
        alt = (34000.0 + j(800.0)) * np.clip(np.minimum(t / 0.25, (1.0 - t) / 0.25), 0.0, 1.0)
    else:
        # southbound leg with an S-shaped lateral profile and a lower cruise
        lat = 52.0 + j(0.1) - (2.5 + j(0.1)) * t
        lon = 8.0 + j(0.1) + (1.0 + j(0.05)) * np.sin(2.0 * np.pi * t) - 1.5 * t
        alt = (24000.0 + j(800.0)) * np.sin(np.pi * t) ** 0.6
    return np.column_stack([lat, lon, alt, duration * t])


def toy_dataset(n: int = 200, m: int = 256, n_families: int = 2, seed: int = 0) -> Dataset:
    rng = stream(seed, "toy-data")
    labels = np.arange(n) % n_families
    raw = [family_trajectory(int(k), m, rng) for k in labels]
    values, norm = normalize(raw)
    return Dataset(values, labels.astype(np.int64), norm, n_families)


def write_toy_csv(path, n: int = 20, points: int = 120, n_families: int = 2, seed: int = 0,
                  start: float = 1.7e9) -> None:
    """Write toy flights as a flight-log CSV with the canonical column names."""
    import csv

    rng = stream(seed, "toy-data")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["flight_id", "timestamp", "latitude", "longitude", "altitude"])
        for i in range(n):
            traj = family_trajectory(i % n_families, points, rng)
            t0 = start + 7200.0 * i
            for lat, lon, alt, dt in traj:
                w.writerow([f"F{i:04d}", f"{t0 + dt:.3f}", f"{lat:.6f}", f"{lon:.6f}", f"{alt:.1f}"])
