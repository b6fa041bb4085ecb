"""Planar trajectory distances and the multi-metric distance report.

Paths are ``[n, 2]`` arrays of (x, y); extra columns such as altitude are
ignored. Coordinates are normalised (lat, lon) unless a report is built in
kilometre mode, in which case both paths are projected first.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import InvalidArgumentError
from .trajdata import NormStats

log = logging.getLogger(__name__)

METRICS = ("sspd", "owd", "hausdorff", "frechet", "frechet_discrete", "dtw", "erp", "edr", "lcss")
EARTH_RADIUS_KM = 6371.0088
PERCENTILES = np.arange(1, 100)


def as_path(points, allow_empty: bool = False) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    if p.ndim == 1 and p.size == 0:
        p = p.reshape(0, 2)
    if p.ndim != 2 or p.shape[1] < 2:
        raise InvalidArgumentError(f"path must be [n, >=2], got shape {p.shape}")
    p = np.ascontiguousarray(p[:, :2])
    if len(p) == 0 and not allow_empty:
        raise InvalidArgumentError("path must have at least one point")
    if not np.all(np.isfinite(p)):
        raise InvalidArgumentError("path has non-finite coordinates")
    return p


# ----------------------------------------------------------------------------
# geometry kernels
# ----------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _dist(ax, ay, bx, by):
    dx = ax - bx
    dy = ay - by
    return math.sqrt(dx * dx + dy * dy)


@numba.njit(cache=True, nogil=True)
def _point_segment(px, py, ax, ay, bx, by):
    dx = bx - ax
    dy = by - ay
    l2 = dx * dx + dy * dy
    t = 0.0
    if l2 > 0.0:
        t = ((px - ax) * dx + (py - ay) * dy) / l2
        t = min(1.0, max(0.0, t))
    return _dist(px, py, ax + t * dx, ay + t * dy)


@numba.njit(cache=True, nogil=True)
def _to_path(P, Q):
    """Distance from each point of P to the polyline Q (point set if |Q| == 1)."""
    out = np.empty(P.shape[0])
    for i in range(P.shape[0]):
        best = np.inf
        # vertex distances first, so a point lying on a vertex of Q scores exactly 0
        for j in range(Q.shape[0]):
            d = _dist(P[i, 0], P[i, 1], Q[j, 0], Q[j, 1])
            if d < best:
                best = d
        for j in range(Q.shape[0] - 1):
            d = _point_segment(P[i, 0], P[i, 1], Q[j, 0], Q[j, 1], Q[j + 1, 0], Q[j + 1, 1])
            if d < best:
                best = d
        out[i] = best
    return out


def point_to_path(P, Q) -> np.ndarray:
    """Per-point distance from ``P`` to the nearest segment of ``Q``."""
    return _to_path(as_path(P), as_path(Q))


def _warn_single(A, B, what):
    if len(A) == 1 or len(B) == 1:
        log.warning("%s: single-point path, using point-to-point distance", what)


def sspd(A, B) -> float:
    A, B = as_path(A), as_path(B)
    _warn_single(A, B, "sspd")
    return float(0.5 * (_to_path(A, B).mean() + _to_path(B, A).mean()))


def hausdorff(A, B) -> float:
    A, B = as_path(A), as_path(B)
    return float(max(_to_path(A, B).max(), _to_path(B, A).max()))


# ----------------------------------------------------------------------------
# dynamic programs
# ----------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _dtw(A, B):
    n, m = A.shape[0], B.shape[0]
    D = np.full((n + 1, m + 1), np.inf)
    D[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            best = min(D[i - 1, j - 1], D[i - 1, j], D[i, j - 1])
            D[i, j] = _dist(A[i - 1, 0], A[i - 1, 1], B[j - 1, 0], B[j - 1, 1]) + best
    return D[n, m]


@numba.njit(cache=True, nogil=True)
def _frechet_discrete(A, B):
    n, m = A.shape[0], B.shape[0]
    D = np.full((n + 1, m + 1), np.inf)
    D[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            best = min(D[i - 1, j - 1], D[i - 1, j], D[i, j - 1])
            D[i, j] = max(_dist(A[i - 1, 0], A[i - 1, 1], B[j - 1, 0], B[j - 1, 1]), best)
    return D[n, m]


@numba.njit(cache=True, nogil=True)
def _erp(A, B, gx, gy):
    n, m = A.shape[0], B.shape[0]
    D = np.zeros((n + 1, m + 1))
    for i in range(1, n + 1):
        D[i, 0] = D[i - 1, 0] + _dist(A[i - 1, 0], A[i - 1, 1], gx, gy)
    for j in range(1, m + 1):
        D[0, j] = D[0, j - 1] + _dist(B[j - 1, 0], B[j - 1, 1], gx, gy)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = D[i - 1, j - 1] + _dist(A[i - 1, 0], A[i - 1, 1], B[j - 1, 0], B[j - 1, 1])
            dele = D[i - 1, j] + _dist(A[i - 1, 0], A[i - 1, 1], gx, gy)
            ins = D[i, j - 1] + _dist(B[j - 1, 0], B[j - 1, 1], gx, gy)
            D[i, j] = min(sub, dele, ins)
    return D[n, m]


@numba.njit(cache=True, nogil=True)
def _edr(A, B, eps):
    n, m = A.shape[0], B.shape[0]
    D = np.zeros((n + 1, m + 1), dtype=np.int64)
    for i in range(n + 1):
        D[i, 0] = i
    for j in range(m + 1):
        D[0, j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if _dist(A[i - 1, 0], A[i - 1, 1], B[j - 1, 0], B[j - 1, 1]) <= eps else 1
            D[i, j] = min(D[i - 1, j - 1] + cost, D[i - 1, j] + 1, D[i, j - 1] + 1)
    return D[n, m]


@numba.njit(cache=True, nogil=True)
def _lcss(A, B, eps):
    n, m = A.shape[0], B.shape[0]
    D = np.zeros((n + 1, m + 1), dtype=np.int64)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            if _dist(A[i - 1, 0], A[i - 1, 1], B[j - 1, 0], B[j - 1, 1]) <= eps:
                D[i, j] = D[i - 1, j - 1] + 1
            else:
                D[i, j] = max(D[i - 1, j], D[i, j - 1])
    return D[n, m]


def dtw(A, B) -> float:
    """Sum of Euclidean costs along the cheapest monotone alignment."""
    return float(_dtw(as_path(A), as_path(B)))


def frechet_discrete(A, B) -> float:
    return float(_frechet_discrete(as_path(A), as_path(B)))


def erp(A, B, gap=(0.0, 0.0)) -> float:
    g = np.asarray(gap, dtype=np.float64)
    if g.shape != (2,) or not np.all(np.isfinite(g)):
        raise InvalidArgumentError(f"ERP gap must be a finite 2-vector, got {gap!r}")
    return float(_erp(as_path(A, True), as_path(B, True), g[0], g[1]))


def _check_eps(eps):
    if not eps >= 0:
        raise InvalidArgumentError(f"epsilon must be >= 0, got {eps}")


def edr(A, B, eps: float = 0.05) -> int:
    _check_eps(eps)
    return int(_edr(as_path(A, True), as_path(B, True), float(eps)))


def lcss_length(A, B, eps: float = 0.05) -> int:
    _check_eps(eps)
    return int(_lcss(as_path(A, True), as_path(B, True), float(eps)))


def lcss(A, B, eps: float = 0.05) -> float:
    """``1 - LCSS / min(|A|, |B|)``; an empty path is at distance 1."""
    _check_eps(eps)
    A, B = as_path(A, True), as_path(B, True)
    if len(A) == 0 or len(B) == 0:
        log.warning("lcss: empty path, distance is 1 by convention")
        return 1.0
    return 1.0 - _lcss(A, B, float(eps)) / min(len(A), len(B))


# ----------------------------------------------------------------------------
# continuous Frechet (free-space reachability + bisection)
# ----------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _free_interval(ax, ay, bx, by, cx, cy, eps):
    """Parameters t in [0, 1] with |a + t(b - a) - c| <= eps; (2, -1) when empty."""
    at_a = _dist(ax, ay, cx, cy) <= eps
    at_b = _dist(bx, by, cx, cy) <= eps
    if at_a and at_b:
        return 0.0, 1.0      # the free set is convex
    dx, dy = bx - ax, by - ay
    fx, fy = ax - cx, ay - cy
    qa = dx * dx + dy * dy
    if qa == 0.0:
        return 2.0, -1.0
    qb = 2.0 * (fx * dx + fy * dy)
    qc = fx * fx + fy * fy - eps * eps
    disc = qb * qb - 4.0 * qa * qc
    if disc < 0.0:
        return 2.0, -1.0
    s = math.sqrt(disc)
    lo = max((-qb - s) / (2.0 * qa), 0.0)
    hi = min((-qb + s) / (2.0 * qa), 1.0)
    if at_a:
        lo = 0.0
    if at_b:
        hi = 1.0
    if lo > hi:
        return 2.0, -1.0
    return lo, hi


@numba.njit(cache=True, nogil=True)
def _frechet_decide(P, Q, eps):
    p, q = P.shape[0], Q.shape[0]
    if _dist(P[0, 0], P[0, 1], Q[0, 0], Q[0, 1]) > eps:
        return False
    if _dist(P[p - 1, 0], P[p - 1, 1], Q[q - 1, 0], Q[q - 1, 1]) > eps:
        return False
    # LR[i, j]: reachable part of the edge at P vertex i along Q segment j
    # BR[i, j]: reachable part of the edge at Q vertex j along P segment i
    lr_lo = np.full((p, q - 1), 2.0)
    lr_hi = np.full((p, q - 1), -1.0)
    br_lo = np.full((p - 1, q), 2.0)
    br_hi = np.full((p - 1, q), -1.0)
    ok = True
    for j in range(q - 1):
        lo, hi = _free_interval(Q[j, 0], Q[j, 1], Q[j + 1, 0], Q[j + 1, 1], P[0, 0], P[0, 1], eps)
        if not ok or lo > 0.0:
            break
        lr_lo[0, j], lr_hi[0, j] = lo, hi
        ok = hi >= 1.0
    ok = True
    for i in range(p - 1):
        lo, hi = _free_interval(P[i, 0], P[i, 1], P[i + 1, 0], P[i + 1, 1], Q[0, 0], Q[0, 1], eps)
        if not ok or lo > 0.0:
            break
        br_lo[i, 0], br_hi[i, 0] = lo, hi
        ok = hi >= 1.0
    for i in range(p - 1):
        for j in range(q - 1):
            left = lr_lo[i, j] <= lr_hi[i, j]
            bottom = br_lo[i, j] <= br_hi[i, j]
            if not (left or bottom):
                continue
            lo, hi = _free_interval(Q[j, 0], Q[j, 1], Q[j + 1, 0], Q[j + 1, 1],
                                    P[i + 1, 0], P[i + 1, 1], eps)
            if not bottom:
                lo = max(lo, lr_lo[i, j])
            if lo <= hi:
                lr_lo[i + 1, j], lr_hi[i + 1, j] = lo, hi
            lo, hi = _free_interval(P[i, 0], P[i, 1], P[i + 1, 0], P[i + 1, 1],
                                    Q[j + 1, 0], Q[j + 1, 1], eps)
            if not left:
                lo = max(lo, br_lo[i, j])
            if lo <= hi:
                br_lo[i, j + 1], br_hi[i, j + 1] = lo, hi
    end_l = lr_lo[p - 1, q - 2] <= lr_hi[p - 1, q - 2] and lr_hi[p - 1, q - 2] >= 1.0
    end_b = br_lo[p - 2, q - 1] <= br_hi[p - 2, q - 1] and br_hi[p - 2, q - 1] >= 1.0
    return end_l or end_b


def frechet_decide(A, B, eps: float) -> bool:
    """True when the continuous Frechet distance is at most ``eps``."""
    A, B = as_path(A), as_path(B)
    if len(A) == 1 or len(B) == 1:
        return _single_point_frechet(A, B) <= eps
    return bool(_frechet_decide(A, B, float(eps)))


def _single_point_frechet(A, B):
    pt, other = (A, B) if len(A) == 1 else (B, A)
    return float(np.sqrt(((other - pt[0]) ** 2).sum(axis=1)).max())


def frechet_bracket(A, B, tolerance: float = 1e-6) -> tuple[float, float]:
    """Bisect until ``hi - lo < tolerance``; the distance lies in ``[lo, hi]``."""
    if not tolerance > 0:
        raise InvalidArgumentError(f"tolerance must be > 0, got {tolerance}")
    A, B = as_path(A), as_path(B)
    if len(A) == 1 or len(B) == 1:
        d = _single_point_frechet(A, B)
        return d, d
    lo = max(_dist(A[0, 0], A[0, 1], B[0, 0], B[0, 1]),
             _dist(A[-1, 0], A[-1, 1], B[-1, 0], B[-1, 1]))
    hi = float(_frechet_discrete(A, B))
    if _frechet_decide(A, B, lo):
        return lo, lo
    while hi - lo >= tolerance:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _frechet_decide(A, B, mid):
            hi = mid
        else:
            lo = mid
    return lo, hi


def frechet(A, B, tolerance: float = 1e-6) -> float:
    return frechet_bracket(A, B, tolerance)[1]


# ----------------------------------------------------------------------------
# one-way distance on a grid
# ----------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _rasterize(G):
    """Grid cells crossed by polyline G (already in cell units), as (ix, iy) rows."""
    cap = 16
    out = np.empty((cap, 2), dtype=np.int64)
    n_out = 0
    for s in range(max(G.shape[0] - 1, 1)):
        ax, ay = G[s, 0], G[s, 1]
        bx, by = G[min(s + 1, G.shape[0] - 1), 0], G[min(s + 1, G.shape[0] - 1), 1]
        if bx < ax or (bx == ax and by < ay):
            ax, ay, bx, by = bx, by, ax, ay
        ix, iy = int(math.floor(ax)), int(math.floor(ay))
        ex, ey = int(math.floor(bx)), int(math.floor(by))
        dx, dy = bx - ax, by - ay
        sx = 1 if dx > 0 else -1
        sy = 1 if dy > 0 else -1
        tdx = abs(1.0 / dx) if dx != 0 else np.inf
        tdy = abs(1.0 / dy) if dy != 0 else np.inf
        if dx > 0:
            tmx = (ix + 1 - ax) / dx
        elif dx < 0:
            tmx = (ax - ix) / -dx
        else:
            tmx = np.inf
        if dy > 0:
            tmy = (iy + 1 - ay) / dy
        elif dy < 0:
            tmy = (ay - iy) / -dy
        else:
            tmy = np.inf
        steps = abs(ex - ix) + abs(ey - iy) + 1
        for _ in range(steps + 1):
            if n_out + 2 > cap:
                cap *= 2
                grown = np.empty((cap, 2), dtype=np.int64)
                grown[:n_out] = out[:n_out]
                out = grown
            out[n_out, 0], out[n_out, 1] = ix, iy
            n_out += 1
            if ix == ex and iy == ey:
                break
            if tmx < tmy:
                ix += sx
                tmx += tdx
            elif tmy < tmx:
                iy += sy
                tmy += tdy
            else:
                ix += sx
                iy += sy
                tmx += tdx
                tmy += tdy
        out[n_out, 0], out[n_out, 1] = ex, ey
        n_out += 1
    return out[:n_out]


@numba.njit(cache=True, nogil=True)
def _directed_cells(CA, CB):
    total = 0.0
    for i in range(CA.shape[0]):
        best = np.inf
        for j in range(CB.shape[0]):
            dx = float(CA[i, 0] - CB[j, 0])
            dy = float(CA[i, 1] - CB[j, 1])
            d = dx * dx + dy * dy
            if d < best:
                best = d
        total += math.sqrt(best)
    return total / CA.shape[0]


def grid_cells(path, origin, cell: float) -> np.ndarray:
    """Unique cells visited by ``path`` on the grid anchored at ``origin``."""
    G = (as_path(path) - np.asarray(origin, dtype=np.float64)) / cell
    return np.unique(_rasterize(np.ascontiguousarray(G)), axis=0)


def owd(A, B, cell: float = 0.01) -> float:
    """Symmetrised one-way distance between the grid rasterisations of A and B."""
    if not cell > 0:
        raise InvalidArgumentError(f"OWD cell size must be > 0, got {cell}")
    A, B = as_path(A), as_path(B)
    both = np.concatenate([A, B])
    origin = both.min(axis=0)
    if cell > np.ptp(both, axis=0).max():
        log.warning("owd: cell %.4g exceeds the bounding box, result is degenerate", cell)
    ca, cb = grid_cells(A, origin, cell), grid_cells(B, origin, cell)
    return float(0.5 * cell * (_directed_cells(ca, cb) + _directed_cells(cb, ca)))


# ----------------------------------------------------------------------------
# distance report
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class DistanceParams:
    unit: str = "normalized"          # or "km"
    eps: float = 0.05                 # EDR / LCSS matching threshold
    gap: tuple = (0.0, 0.0)           # ERP gap point
    owd_cell: float = 0.01
    frechet_tol: float = 1e-6
    workers: int = 1

    def __post_init__(self):
        if self.unit not in ("normalized", "km"):
            raise InvalidArgumentError(f"unit must be 'normalized' or 'km', got {self.unit!r}")
        _check_eps(self.eps)
        if not self.owd_cell > 0 or not self.frechet_tol > 0 or self.workers < 1:
            raise InvalidArgumentError("owd_cell, frechet_tol must be > 0 and workers >= 1")

    @classmethod
    def km(cls, **kw) -> "DistanceParams":
        """Kilometre-mode defaults: 5 km matching threshold, 1 km OWD cells."""
        return cls(**{"unit": "km", "eps": 5.0, "owd_cell": 1.0, "frechet_tol": 1e-4, **kw})


def project_km(path, norm: NormStats) -> np.ndarray:
    """Normalised (lat, lon) -> local equirectangular (east, north) kilometres.

    The projection is anchored at the normalisation minimum, so the
    normalised origin maps to (0, 0) in both unit modes.
    """
    p = as_path(path)
    lat = norm.minimum[0] + p[:, 0] * norm.scale[0]
    lon = norm.minimum[1] + p[:, 1] * norm.scale[1]
    ref = np.radians(0.5 * (norm.minimum[0] + norm.maximum[0]))
    k = EARTH_RADIUS_KM * np.pi / 180.0
    return np.stack([(lon - norm.minimum[1]) * k * np.cos(ref), (lat - norm.minimum[0]) * k], axis=1)


def all_metrics(A, B, params: DistanceParams = DistanceParams()) -> dict[str, float]:
    A, B = as_path(A), as_path(B)
    return {
        "sspd": sspd(A, B),
        "owd": owd(A, B, params.owd_cell),
        "hausdorff": hausdorff(A, B),
        "frechet": frechet(A, B, params.frechet_tol),
        "frechet_discrete": frechet_discrete(A, B),
        "dtw": dtw(A, B),
        "erp": erp(A, B, params.gap),
        "edr": float(edr(A, B, params.eps)),
        "lcss": lcss(A, B, params.eps),
    }


def metric_correlations(table: np.ndarray) -> np.ndarray:
    """Pearson matrix over metric columns; NaN marks an undefined (constant) column."""
    k = table.shape[1]
    out = np.full((k, k), np.nan)
    std = table.std(axis=0)
    live = np.flatnonzero(std > 0)
    if len(live) >= 2 and len(table) >= 2:
        out[np.ix_(live, live)] = np.corrcoef(table[:, live], rowvar=False)
    np.fill_diagonal(out, 1.0)
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class DistanceReport:
    values: np.ndarray                 # [n_pairs, 9] in METRICS order
    params: DistanceParams = field(default_factory=DistanceParams)
    metrics: tuple = METRICS

    @property
    def percentiles(self) -> np.ndarray:
        """``[99, 9]`` table of the 1st..99th percentiles of each metric."""
        return np.percentile(self.values, PERCENTILES, axis=0)

    @property
    def correlation(self) -> np.ndarray:
        return metric_correlations(self.values)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.metrics.index(name)]

    def summary(self) -> dict:
        nan_to_none = lambda a: [[None if np.isnan(v) else float(v) for v in row] for row in a]
        return {
            "unit": self.params.unit,
            "params": {"eps": self.params.eps, "gap": list(self.params.gap),
                       "owd_cell": self.params.owd_cell, "frechet_tol": self.params.frechet_tol},
            "n_pairs": int(len(self.values)),
            "metrics": list(self.metrics),
            "percentiles": {"levels": PERCENTILES.tolist(),
                            **{m: self.percentiles[:, i].tolist() for i, m in enumerate(self.metrics)}},
            "correlation": nan_to_none(self.correlation),
        }


def distance_report(pairs, params: DistanceParams = DistanceParams(),
                    norm: NormStats | None = None) -> DistanceReport:
    """Evaluate every metric on each ``(A, B)`` pair.

    In ``km`` mode both paths are projected with ``norm`` before measuring.
    """
    pairs = list(pairs)
    if not pairs:
        raise InvalidArgumentError("distance report needs at least one pair")
    if len(pairs) < 2:
        log.warning("distance report: a single pair gives no metric correlations")
    if params.unit == "km":
        if norm is None:
            raise InvalidArgumentError("km mode needs NormStats to project coordinates")
        pairs = [(project_km(a, norm), project_km(b, norm)) for a, b in pairs]

    def row(pair):
        d = all_metrics(pair[0], pair[1], params)
        return [d[m] for m in METRICS]

    if params.workers > 1:
        with ThreadPoolExecutor(params.workers) as pool:
            rows = list(pool.map(row, pairs))
    else:
        rows = [row(p) for p in pairs]
    return DistanceReport(np.asarray(rows, dtype=np.float64), params)
