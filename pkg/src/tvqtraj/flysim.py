"""Kinematic waypoint-following simulator used to score flyability.

A synthetic trajectory is cut into timed waypoints, flown by a point-mass
aircraft under speed, turn-rate, climb-rate and acceleration limits, and the
resulting track is compared with the input using every trajdist metric.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .trajdata import NormStats, denormalize
from .trajdist import DistanceParams, DistanceReport, distance_report

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6371008.8
FT_TO_M = 0.3048
TRACK_COLUMNS = ("time_s", "lat_deg", "lon_deg", "alt_m", "speed_mps", "heading_deg")


@dataclass(frozen=True)
class PerformanceEnvelope:
    v_min: float = 60.0        # m/s ground speed
    v_max: float = 260.0
    turn_rate: float = 3.0     # deg/s
    vs_max: float = 20.0       # m/s
    a_max: float = 1.0         # m/s^2

    def __post_init__(self):
        vals = (self.v_min, self.v_max, self.turn_rate, self.vs_max, self.a_max)
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise InvalidArgumentError(f"envelope limits must be positive, got {vals}")
        if self.v_min >= self.v_max:
            raise InvalidArgumentError(f"v_min {self.v_min} must be below v_max {self.v_max}")


@dataclass(frozen=True)
class SimTrack:
    data: np.ndarray           # [n, 6] in TRACK_COLUMNS order
    sequenced: np.ndarray      # step index at which each waypoint was sequenced, -1 if never
    miss_m: np.ndarray         # closest approach to each waypoint when sequenced (m)
    unreached: bool            # timed out before the last waypoint

    @property
    def time(self):
        return self.data[:, 0]

    @property
    def latlon(self):
        return self.data[:, 1:3]

    def __len__(self):
        return len(self.data)


def to_waypoints(traj: np.ndarray, norm: NormStats, stride: int) -> np.ndarray:
    """Normalised ``[m, 4]`` trajectory -> ``[k, 4]`` (lat deg, lon deg, alt m, time s).

    Every ``stride``-th sample is kept and the final sample is always included.
    """
    if stride < 1:
        raise InvalidArgumentError(f"stride must be >= 1, got {stride}")
    x = np.asarray(traj, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 4:
        raise InvalidArgumentError(f"expected [m, 4] trajectory, got {x.shape}")
    idx = np.arange(0, len(x), stride)
    if idx[-1] != len(x) - 1:
        idx = np.append(idx, len(x) - 1)
    phys = denormalize(x[idx], norm)
    phys[:, 2] *= FT_TO_M
    return phys


def haversine_m(lat1, lon1, lat2, lon2) -> float:
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp, dl = p2 - p1, math.radians(lon2 - lon1)
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def _local_en(lat0, lon0, lat, lon):
    """(east, north) metres of (lat, lon) relative to (lat0, lon0), flat earth."""
    k = EARTH_RADIUS_M * math.pi / 180.0
    return (lon - lon0) * k * math.cos(math.radians(lat0)), (lat - lat0) * k


def _wrap180(a):
    return (a + 180.0) % 360.0 - 180.0


def _leg_speed(wps, k, env):
    dist = haversine_m(wps[k - 1, 0], wps[k - 1, 1], wps[k, 0], wps[k, 1])
    dt = wps[k, 3] - wps[k - 1, 3]
    v = dist / dt if dt > 0 else env.v_max
    return min(max(v, env.v_min), env.v_max)


def simulate(waypoints: np.ndarray, env: PerformanceEnvelope = PerformanceEnvelope(),
             dt: float = 1.0, capture_m: float = 500.0, timeout_factor: float = 3.0) -> SimTrack:
    """Fly ``[k, 4]`` timed waypoints with a rate-limited point mass.

    A waypoint is sequenced once the aircraft is within ``capture_m`` of it or
    has passed abeam of it along the inbound leg. The run stops after the last
    waypoint or at ``timeout_factor`` times the nominal duration.
    """
    wps = np.asarray(waypoints, dtype=np.float64)
    if wps.ndim != 2 or wps.shape[1] != 4 or len(wps) < 2:
        raise InvalidArgumentError(f"need >= 2 waypoints as [k, 4], got {wps.shape}")
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be > 0, got {dt}")
    if not np.all(np.isfinite(wps)):
        raise InvalidArgumentError("waypoints must be finite")

    k_wp = len(wps)
    total_m = sum(haversine_m(wps[i, 0], wps[i, 1], wps[i + 1, 0], wps[i + 1, 1]) for i in range(k_wp - 1))
    span = wps[-1, 3] - wps[0, 3]
    # the schedule defines the nominal duration; distance only covers untimed input
    nominal = max(span if span > 0 else total_m / env.v_max, dt)
    t_end = timeout_factor * nominal
    max_turn = env.turn_rate * dt

    lat, lon, alt = wps[0, 0], wps[0, 1], wps[0, 2]
    e, n = _local_en(lat, lon, wps[1, 0], wps[1, 1])
    heading = math.degrees(math.atan2(e, n)) % 360.0
    speed = _leg_speed(wps, 1, env)
    t = 0.0
    active = 1
    sequenced = np.full(k_wp, -1, dtype=np.int64)
    sequenced[0] = 0
    miss = np.zeros(k_wp)
    rows = [(t, lat, lon, alt, speed, heading)]

    def try_sequence():
        nonlocal active
        while active < k_wp:
            d = haversine_m(lat, lon, wps[active, 0], wps[active, 1])
            le, ln = _local_en(wps[active - 1, 0], wps[active - 1, 1], wps[active, 0], wps[active, 1])
            pe, pn = _local_en(wps[active, 0], wps[active, 1], lat, lon)
            passed = (le * pe + ln * pn) >= 0.0 and (le != 0.0 or ln != 0.0)
            if d > capture_m and not passed:
                return
            sequenced[active] = len(rows) - 1
            miss[active] = d
            active += 1

    try_sequence()
    while active < k_wp and t < t_end:
        tgt = wps[active]
        e, n = _local_en(lat, lon, tgt[0], tgt[1])
        desired = math.degrees(math.atan2(e, n))
        heading = (heading + min(max(_wrap180(desired - heading), -max_turn), max_turn)) % 360.0

        v_cmd = _leg_speed(wps, active, env)
        speed += min(max(v_cmd - speed, -env.a_max * dt), env.a_max * dt)
        speed = min(max(speed, env.v_min), env.v_max)

        to_go = max(math.hypot(e, n) / speed, dt)
        climb = min(max((tgt[2] - alt) / to_go, -env.vs_max), env.vs_max)
        alt += climb * dt

        h = math.radians(heading)
        dn, de = speed * math.cos(h) * dt, speed * math.sin(h) * dt
        lat_new = lat + math.degrees(dn / EARTH_RADIUS_M)
        lon += math.degrees(de / (EARTH_RADIUS_M * math.cos(math.radians(lat))))
        lat = lat_new
        t += dt
        rows.append((t, lat, lon, alt, speed, heading))
        try_sequence()

    unreached = active < k_wp
    if unreached:
        log.info("simulation timed out at %.0f s with waypoint %d of %d active", t, active, k_wp)
    return SimTrack(np.array(rows), sequenced, miss, unreached)


def validate_track(track: SimTrack, env: PerformanceEnvelope, tol: float = 1e-6) -> list[str]:
    """Check a track against the envelope from its recorded samples alone.

    Returns human-readable violations; an empty list means the track is valid.
    """
    d = track.data
    problems = []
    if d.ndim != 2 or d.shape[1] != 6 or len(d) == 0:
        return [f"track has shape {d.shape}, expected [n, 6]"]
    if not np.all(np.isfinite(d)):
        problems.append("non-finite samples")
    step = np.diff(d[:, 0])
    if np.any(step <= 0):
        problems.append("time not strictly increasing")
        return problems
    v = d[:, 4]
    if np.any(v < 0) or np.any(v > env.v_max + tol):
        problems.append(f"speed outside [0, {env.v_max}]: range {v.min():.3f}..{v.max():.3f}")
    turn = np.abs(_wrap180(np.diff(d[:, 5]))) / step
    if np.any(turn > env.turn_rate + tol):
        problems.append(f"turn rate {turn.max():.6f} deg/s exceeds {env.turn_rate}")
    climb = np.abs(np.diff(d[:, 3])) / step
    if np.any(climb > env.vs_max + tol):
        problems.append(f"vertical rate {climb.max():.6f} m/s exceeds {env.vs_max}")
    acc = np.abs(np.diff(v)) / step
    if np.any(acc > env.a_max + tol):
        problems.append(f"acceleration {acc.max():.6f} m/s^2 exceeds {env.a_max}")
    seq = track.sequenced[track.sequenced >= 0]
    if np.any(np.diff(seq) < 0) or np.any(np.diff((track.sequenced >= 0).astype(int)) > 0):
        problems.append("waypoint sequencing regressed")
    return problems


def track_to_normalized(track: SimTrack, norm: NormStats, m: int) -> np.ndarray:
    """Resample a track uniformly in time to ``m`` points of normalised (lat, lon)."""
    t = track.time
    grid = np.linspace(t[0], t[-1], m)
    lat = np.interp(grid, t, track.data[:, 1])
    lon = np.interp(grid, t, track.data[:, 2])
    return np.stack([(lat - norm.minimum[0]) / norm.scale[0], (lon - norm.minimum[1]) / norm.scale[1]], axis=1)


@dataclass(frozen=True)
class FlyabilityResult:
    report: DistanceReport
    unreached: np.ndarray      # [n] bool
    violations: list           # per trajectory, validator output
    tracks: list


def flyability_assess(values: np.ndarray, norm: NormStats, env: PerformanceEnvelope = PerformanceEnvelope(),
                      params: DistanceParams = DistanceParams(), stride: int = 16, dt: float = 1.0,
                      workers: int = 1) -> FlyabilityResult:
    """Simulate every trajectory of a normalised ``[n, m, 4]`` set and score it."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != 4 or len(x) == 0:
        raise InvalidArgumentError(f"expected a non-empty [n, m, 4] set, got {x.shape}")

    def run(traj):
        return simulate(to_waypoints(traj, norm, stride), env, dt)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            tracks = list(pool.map(run, x))
    else:
        tracks = [run(traj) for traj in x]
    pairs = [(traj[:, :2], track_to_normalized(tr, norm, x.shape[1])) for traj, tr in zip(x, tracks)]
    report = distance_report(pairs, params, norm)
    return FlyabilityResult(report, np.array([tr.unreached for tr in tracks]),
                            [validate_track(tr, env) for tr in tracks], tracks)


def write_waypoints_csv(path, waypoints: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lat_deg", "lon_deg", "alt_m", "time_s"])
        w.writerows([[repr(float(v)) for v in row] for row in waypoints])


def write_track_csv(path, track: SimTrack) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACK_COLUMNS)
        w.writerows([[repr(float(v)) for v in row] for row in track.data])
