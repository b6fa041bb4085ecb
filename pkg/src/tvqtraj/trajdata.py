"""Flight-log ingestion, resampling, normalisation, clustering and splitting."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import DegenerateFlightError, InvalidArgumentError, SchemaError

log = logging.getLogger(__name__)

CHANNELS = ("latitude", "longitude", "altitude", "timedelta")
REQUIRED_COLUMNS = ("flight_id", "timestamp", "latitude", "longitude", "altitude")
DEFAULT_M = 256
DEFAULT_CLUSTERS = 5
MIN_POINTS = 10
TELEPORT_DEG = 2.0
CONSTANT_EPS = 1e-6


@dataclass
class RawFlight:
    flight_id: str
    points: np.ndarray  # [n, 4]: timestamp (s), latitude, longitude, altitude (ft)

    @property
    def times(self) -> np.ndarray:
        return self.points[:, 0]


@dataclass(frozen=True)
class NormStats:
    minimum: np.ndarray  # [4] physical units
    maximum: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.maximum) <= np.asarray(self.minimum)):
            raise InvalidArgumentError("NormStats requires max > min on every channel")

    @property
    def scale(self) -> np.ndarray:
        return np.asarray(self.maximum, dtype=np.float64) - np.asarray(self.minimum, dtype=np.float64)


@dataclass
class Dataset:
    values: np.ndarray  # [n, m, 4] normalised to [0, 1]
    labels: np.ndarray  # [n] ints in 0..C-1
    norm: NormStats
    n_classes: int = 1
    flight_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.labels) != len(self.values):
            raise InvalidArgumentError(
                f"{len(self.labels)} labels for {len(self.values)} trajectories")
        if len(self.labels) and self.labels.max() >= self.n_classes:
            self.n_classes = int(self.labels.max()) + 1

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        ids = [self.flight_ids[i] for i in idx] if self.flight_ids else []
        return Dataset(self.values[idx], self.labels[idx], self.norm, self.n_classes, ids)


@dataclass
class IngestReport:
    rows: int = 0
    unparsable: int = 0
    duplicates: int = 0
    out_of_range: int = 0
    teleports: int = 0
    short_flights: int = 0
    flights: int = 0


# ----------------------------------------------------------------------------
# ingestion
# ----------------------------------------------------------------------------

def _parse_times(col: pd.Series) -> pd.Series:
    num = pd.to_numeric(col, errors="coerce")
    if num.notna().sum() >= 0.5 * len(col):
        return num
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        dt = pd.to_datetime(col, errors="coerce", utc=True, format="mixed")
    secs = (dt - pd.Timestamp("1970-01-01", tz="UTC")).dt.total_seconds()
    return secs


def ingest_with_report(path: str | Path, schema: Mapping[str, str] | None = None
                       ) -> tuple[list[RawFlight], IngestReport]:
    """Read a flight-log CSV; ``schema`` maps canonical names to file columns."""
    schema = dict(schema or {})
    colmap = {c: schema.get(c, c) for c in REQUIRED_COLUMNS}
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [c for c, src in colmap.items() if src not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing required column(s) {missing}; "
                          f"found {list(df.columns)}")
    rep = IngestReport(rows=len(df))
    frame = pd.DataFrame({
        "flight_id": df[colmap["flight_id"]].astype(str).str.strip(),
        "timestamp": _parse_times(df[colmap["timestamp"]]),
        "latitude": pd.to_numeric(df[colmap["latitude"]], errors="coerce"),
        "longitude": pd.to_numeric(df[colmap["longitude"]], errors="coerce"),
        "altitude": pd.to_numeric(df[colmap["altitude"]], errors="coerce"),
    })
    bad = frame[list(REQUIRED_COLUMNS[1:])].isna().any(axis=1) | (frame["flight_id"] == "")
    rep.unparsable = int(bad.sum())
    if rep.rows and rep.unparsable > 0.5 * rep.rows:
        first = int(np.flatnonzero(bad.to_numpy())[0])
        raise SchemaError(f"{path}: {rep.unparsable} of {rep.rows} rows unparsable "
                          f"(first at data row {first + 1})")
    frame = frame[~bad]
    before = len(frame)
    frame = frame.drop_duplicates(subset=["flight_id", "timestamp"], keep="first")
    rep.duplicates = before - len(frame)
    ok = frame["latitude"].between(-90, 90) & frame["longitude"].between(-180, 180) \
        & (frame["altitude"] >= 0)
    rep.out_of_range = int((~ok).sum())
    frame = frame[ok]

    flights = []
    for fid, grp in frame.groupby("flight_id", sort=False):
        pts = grp[["timestamp", "latitude", "longitude", "altitude"]].to_numpy(np.float64)
        pts = pts[np.argsort(pts[:, 0], kind="stable")]
        keep = _teleport_filter(pts)
        rep.teleports += int(len(pts) - keep.sum())
        pts = pts[keep]
        if len(pts) < MIN_POINTS:
            rep.short_flights += 1
            continue
        flights.append(RawFlight(str(fid), pts))
    rep.flights = len(flights)
    if rep.unparsable:
        log.warning("%s: skipped %d unparsable rows", path, rep.unparsable)
    return flights, rep


def ingest(path: str | Path, schema: Mapping[str, str] | None = None) -> list[RawFlight]:
    return ingest_with_report(path, schema)[0]


def _teleport_filter(pts: np.ndarray) -> np.ndarray:
    keep = np.ones(len(pts), dtype=bool)
    last = 0
    for i in range(1, len(pts)):
        jump = abs(pts[i, 1] - pts[last, 1]) + abs(pts[i, 2] - pts[last, 2])
        if jump > TELEPORT_DEG:
            keep[i] = False
        else:
            last = i
    return keep


# ----------------------------------------------------------------------------
# resampling and normalisation
# ----------------------------------------------------------------------------

def resample(flight: RawFlight, m: int = DEFAULT_M) -> np.ndarray:
    """Linear interpolation onto ``m`` uniform times; returns [m, 4] (lat, lon, alt, timedelta)."""
    pts = flight.points
    if len(pts) < 2:
        raise DegenerateFlightError(f"flight {flight.flight_id} has {len(pts)} point(s)")
    if m < 2:
        raise InvalidArgumentError(f"resample length must be >= 2, got {m}")
    t = pts[:, 0]
    grid = np.linspace(t[0], t[-1], m)
    grid[-1] = t[-1]
    out = np.empty((m, 4))
    for c in range(3):
        out[:, c] = np.interp(grid, t, pts[:, c + 1])
    out[:, 3] = grid - t[0]
    return out


def normalize(flights: Sequence[np.ndarray]) -> tuple[np.ndarray, NormStats]:
    """Dataset-global per-channel min-max scaling to [0, 1]."""
    if len(flights) == 0:
        raise InvalidArgumentError("normalize needs at least one flight")
    x = np.stack([np.asarray(f, dtype=np.float64) for f in flights])
    lo = x.min(axis=(0, 1))
    hi = x.max(axis=(0, 1))
    const = hi <= lo
    if np.any(const):
        log.warning("constant channel(s) %s: widening max by %g",
                    [CHANNELS[i] for i in np.flatnonzero(const)], CONSTANT_EPS)
        hi = np.where(const, lo + CONSTANT_EPS, hi)
    norm = NormStats(lo, hi)
    return (x - lo) / norm.scale, norm


def denormalize(values: np.ndarray, norm: NormStats) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    lo = np.asarray(norm.minimum, dtype=np.float64)
    if v.shape[-1] != lo.size:
        raise InvalidArgumentError(f"{v.shape[-1]} channels but NormStats has {lo.size}")
    return v * norm.scale + lo


# ----------------------------------------------------------------------------
# clustering
# ----------------------------------------------------------------------------

@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    iterations: int


def _unit_draw(seed: int, index: int) -> float:
    # depends only on (seed, index), never on the data or its order
    return float(np.random.default_rng([int(seed) & 0xFFFFFFFF, index, 0x6B6D]).random())


def kmeans(X: np.ndarray, C: int, seed: int = 0, max_iter: int = 100) -> KMeansResult:
    """k-means++ / Lloyd, equivariant under row permutation of ``X``.

    All work happens on rows sorted lexicographically, so the input order
    cannot influence seeding, summation order or tie-breaking.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if C < 1 or C > n:
        raise InvalidArgumentError(f"cluster count must be in 1..{n}, got {C}")
    order = np.lexsort(X.T[::-1])
    Xs = X[order]

    centers = [min(int(_unit_draw(seed, 0) * n), n - 1)]
    d2 = ((Xs - Xs[centers[0]]) ** 2).sum(axis=1)
    for t in range(1, C):
        total = d2.sum()
        if total <= 0:
            free = np.setdiff1d(np.arange(n), centers)
            nxt = int(free[0])
        else:
            cum = np.cumsum(d2)
            nxt = int(np.searchsorted(cum, _unit_draw(seed, t) * total, side="left"))
            nxt = min(nxt, n - 1)
            while d2[nxt] == 0:  # never pick an existing centre
                nxt += 1
        centers.append(nxt)
        d2 = np.minimum(d2, ((Xs - Xs[nxt]) ** 2).sum(axis=1))
    cent = Xs[centers].copy()

    labels = np.full(n, -1)
    it = 0
    for it in range(1, max_iter + 1):
        dist = ((Xs[:, None, :] - cent[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(dist, axis=1)
        for _ in range(C):
            counts = np.bincount(new, minlength=C)
            empty = np.flatnonzero(counts == 0)
            if not len(empty):
                break
            own = dist[np.arange(n), new]
            far = int(np.argmax(own))
            cent[empty[0]] = Xs[far]
            dist = ((Xs[:, None, :] - cent[None, :, :]) ** 2).sum(axis=2)
            new = np.argmin(dist, axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
        for k in range(C):
            cent[k] = Xs[labels == k].mean(axis=0)
    inertia = float(((Xs - cent[labels]) ** 2).sum())
    out = np.empty(n, dtype=np.int64)
    out[order] = labels
    return KMeansResult(out, cent, inertia, it)


def cluster(dataset: Dataset, C: int = DEFAULT_CLUSTERS, seed: int = 0) -> np.ndarray:
    """k-means labels over the flattened (lat, lon) channels."""
    if C < 1 or C > dataset.n:
        raise InvalidArgumentError(f"cluster count must be in 1..{dataset.n}, got {C}")
    X = dataset.values[:, :, :2].reshape(dataset.n, -1)
    return kmeans(X, C, seed).labels


# ----------------------------------------------------------------------------
# splitting
# ----------------------------------------------------------------------------

def split_indices(labels: np.ndarray, fraction: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < fraction < 1.0:
        raise InvalidArgumentError(f"validation fraction must be in (0, 1), got {fraction}")
    labels = np.asarray(labels)
    n = len(labels)
    n_val = int(round(fraction * n))
    classes, counts = np.unique(labels, return_counts=True)
    # largest-remainder allocation, then guarantee every class with >= 2
    # members at least one validation slot while keeping one for training
    quota = fraction * counts
    alloc = np.floor(quota).astype(int)
    rest = n_val - alloc.sum()
    for k in np.argsort(-(quota - alloc), kind="stable")[:max(rest, 0)]:
        alloc[k] += 1
    for k in np.flatnonzero((counts >= 2) & (alloc == 0)):
        donors = np.flatnonzero(alloc > 1)
        if len(donors) == 0:
            continue
        alloc[donors[np.argmax(alloc[donors])]] -= 1
        alloc[k] = 1
    alloc = np.minimum(alloc, np.maximum(counts - 1, 0))
    rng = np.random.default_rng(seed)
    val = []
    for c, a in zip(classes, alloc):
        idx = np.flatnonzero(labels == c)
        val.extend(rng.permutation(idx)[:a].tolist())
    val = np.sort(np.asarray(val, dtype=np.int64))
    train = np.setdiff1d(np.arange(n), val)
    return train, val


def split(dataset: Dataset, fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    tr, va = split_indices(dataset.labels, fraction, seed)
    return dataset.subset(tr), dataset.subset(va)


def build_dataset(flights: Sequence[RawFlight], m: int = DEFAULT_M, C: int = DEFAULT_CLUSTERS,
                  seed: int = 0) -> Dataset:
    """Resample, normalise and cluster raw flights."""
    resampled = [resample(f, m) for f in flights]
    values, norm = normalize(resampled)
    ds = Dataset(values, np.zeros(len(values), dtype=np.int64), norm, 1,
                 [f.flight_id for f in flights])
    C = min(C, ds.n)
    ds.labels = cluster(ds, C, seed)
    ds.n_classes = C
    return ds
