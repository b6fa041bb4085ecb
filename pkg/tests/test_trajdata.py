import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tvqtraj import trajdata as td
from tvqtraj.errors import DegenerateFlightError, InvalidArgumentError, SchemaError

HEADER = "flight_id,timestamp,latitude,longitude,altitude\n"


def write_csv(path, rows):
    path.write_text(HEADER + "".join(",".join(map(str, r)) + "\n" for r in rows))
    return path


def straight_rows(fid, n, lat0=50.0, lon0=5.0):
    return [(fid, 1000 + 10 * i, lat0 + 0.01 * i, lon0 + 0.01 * i, 1000 + 100 * i) for i in range(n)]


# ---------------------------------------------------------------- ingest

def test_duplicate_rows_collapse(tmp_path):
    rows = straight_rows("A", 12)
    rows.insert(3, rows[3])
    flights = td.ingest(write_csv(tmp_path / "f.csv", rows))
    assert len(flights[0].points) == 12
    assert len(np.unique(flights[0].times)) == 12


def test_out_of_range_latitude_dropped(tmp_path):
    rows = straight_rows("A", 12)
    rows[5] = ("A", rows[5][1], 95.0, rows[5][3], rows[5][4])
    flights, rep = td.ingest_with_report(write_csv(tmp_path / "f.csv", rows))
    assert len(flights[0].points) == 11 and rep.out_of_range == 1
    assert np.all(np.abs(flights[0].points[:, 1]) <= 90)


def test_negative_altitude_and_teleport_dropped(tmp_path):
    rows = straight_rows("A", 14)
    rows[4] = ("A", rows[4][1], rows[4][2], rows[4][3], -5)
    rows[8] = ("A", rows[8][1], rows[8][2] + 3.0, rows[8][3], rows[8][4])
    flights, rep = td.ingest_with_report(write_csv(tmp_path / "f.csv", rows))
    assert len(flights[0].points) == 12 and rep.teleports == 1


def test_three_flights_one_short(tmp_path):
    rows = straight_rows("A", 12) + straight_rows("B", 5) + straight_rows("C", 20, 40.0, 2.0)
    flights = td.ingest(write_csv(tmp_path / "f.csv", rows))
    assert [f.flight_id for f in flights] == ["A", "C"]


def test_missing_column_is_schema_error(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("flight_id,timestamp,latitude,longitude\nA,1,2,3\n")
    with pytest.raises(SchemaError, match="altitude"):
        td.ingest(p)


def test_column_mapping(tmp_path):
    p = tmp_path / "f.csv"
    lines = ["callsign,time,lat,lon,alt"] + [f"X,{i},{50 + i * 0.01},5,{i * 10}" for i in range(10)]
    p.write_text("\n".join(lines) + "\n")
    flights = td.ingest(p, {"flight_id": "callsign", "timestamp": "time", "latitude": "lat",
                            "longitude": "lon", "altitude": "alt"})
    assert len(flights) == 1 and len(flights[0].points) == 10


def test_unparsable_rows_skipped_until_majority(tmp_path):
    rows = straight_rows("A", 12) + [("A", "x", "y", "z", "w")] * 3
    flights, rep = td.ingest_with_report(write_csv(tmp_path / "ok.csv", rows))
    assert rep.unparsable == 3 and len(flights) == 1
    rows = straight_rows("A", 4) + [("A", "x", "y", "z", "w")] * 6
    with pytest.raises(SchemaError):
        td.ingest(write_csv(tmp_path / "bad.csv", rows))


# ---------------------------------------------------------------- resample

def raw(times, lats):
    pts = np.column_stack([times, lats, np.zeros(len(times)), np.zeros(len(times))])
    return td.RawFlight("x", pts.astype(float))


def test_resample_midpoint():
    out = td.resample(raw([0, 10], [0, 1]), 3)
    np.testing.assert_allclose(out[:, 0], [0, 0.5, 1])
    np.testing.assert_allclose(out[:, 3], [0, 5, 10])


def test_resample_identity_on_uniform_input():
    rng = np.random.default_rng(0)
    pts = np.column_stack([np.arange(20) * 4.0, rng.normal(size=(20, 3))])
    out = td.resample(td.RawFlight("x", pts), 20)
    np.testing.assert_allclose(out[:, :3], pts[:, 1:], atol=1e-9)


def test_resample_uneven_against_hand_piecewise_linear():
    # knots (t, lat): (0, 0), (1, 2), (4, -1); uniform times 0, 1, 2, 3, 4
    out = td.resample(raw([0, 1, 4], [0, 2, -1]), 5)
    np.testing.assert_allclose(out[:, 0], [0, 2, 1, 0, -1], atol=1e-12)


def test_resample_degenerate():
    with pytest.raises(DegenerateFlightError):
        td.resample(raw([0], [0]), 4)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.1, 100), min_size=1, max_size=30), st.integers(2, 300))
def test_resample_preserves_endpoints(gaps, m):
    t = np.concatenate([[0.0], np.cumsum(gaps)])
    rng = np.random.default_rng(len(gaps))
    pts = np.column_stack([t, rng.normal(size=(len(t), 3))])
    out = td.resample(td.RawFlight("x", pts), m)
    np.testing.assert_allclose(out[0, :3], pts[0, 1:], atol=1e-9)
    np.testing.assert_allclose(out[-1, :3], pts[-1, 1:], atol=1e-9)
    assert np.all(np.diff(out[:, 3]) >= 0)


# ---------------------------------------------------------------- normalize

def test_normalize_single_flight_endpoints():
    f = np.random.default_rng(1).normal(size=(16, 4))
    x, _ = td.normalize([f])
    np.testing.assert_allclose(x.min(axis=(0, 1)), 0)
    np.testing.assert_allclose(x.max(axis=(0, 1)), 1)


def test_normalize_hand_values():
    f = np.column_stack([[100.0, 150.0, 200.0]] + [np.arange(3.0)] * 3)
    x, _ = td.normalize([f])
    np.testing.assert_allclose(x[0, :, 0], [0, 0.5, 1])


def test_denormalize_hand_values():
    norm = td.NormStats(np.array([0.0, 0, 0, 0]), np.array([1.0, 1, 40000, 1]))
    out = td.denormalize(np.array([[0.0, 1.0, 0.25, 0.0]]), norm)
    np.testing.assert_allclose(out[0], [0, 1, 10000, 0])


def test_constant_channel_widened(caplog):
    f = np.column_stack([np.arange(5.0), np.full(5, 3.0), np.arange(5.0), np.arange(5.0)])
    x, norm = td.normalize([f])
    assert norm.maximum[1] - norm.minimum[1] == pytest.approx(1e-6)
    assert "constant" in caplog.text
    assert np.all((x >= 0) & (x <= 1))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(2, 20), st.integers(0, 10_000))
def test_normalize_round_trip(n, m, seed):
    rng = np.random.default_rng(seed)
    flights = [rng.uniform(-1e4, 1e4, size=(m, 4)) for _ in range(n)]
    x, norm = td.normalize(flights)
    assert np.all((x >= 0) & (x <= 1))
    back = td.denormalize(x, norm)
    np.testing.assert_allclose((back - norm.minimum) / norm.scale,
                               (np.stack(flights) - norm.minimum) / norm.scale, atol=1e-6)


# ---------------------------------------------------------------- cluster

def make_ds(values, labels=None):
    values = np.asarray(values, dtype=float)
    labels = np.zeros(len(values), dtype=int) if labels is None else labels
    return td.Dataset(values, labels, td.NormStats(np.zeros(4), np.ones(4)))


def bundles(rng, n_per=10, m=16):
    t = np.linspace(0, 1, m)
    out = []
    for offset in (0.0, 10.0):
        for _ in range(n_per):
            tr = np.zeros((m, 4))
            tr[:, 0] = offset + t + rng.normal(0, 0.05, m)
            tr[:, 1] = offset + 0.5 * t + rng.normal(0, 0.05, m)
            out.append(tr)
    return np.stack(out), np.repeat([0, 1], n_per)


def test_cluster_single():
    ds = make_ds(np.random.default_rng(0).normal(size=(7, 8, 4)))
    assert np.all(td.cluster(ds, 1, 3) == 0)


def test_cluster_two_bundles_recovered():
    vals, truth = bundles(np.random.default_rng(1))
    labels = td.cluster(make_ds(vals), 2, seed=4)
    agree = np.mean(labels == truth)
    assert agree in (0.0, 1.0)
    # distance-to-centroid oracle: each point closer to its own bundle mean
    X = vals[:, :, :2].reshape(len(vals), -1)
    cents = np.stack([X[labels == k].mean(0) for k in (0, 1)])
    d = ((X[:, None] - cents[None]) ** 2).sum(-1)
    assert np.array_equal(np.argmin(d, 1), labels)


def test_cluster_c_equals_n():
    X = np.random.default_rng(2).normal(size=(6, 10))
    res = td.kmeans(X, 6, seed=1)
    assert sorted(res.labels) == list(range(6)) and res.inertia == 0.0


def test_cluster_too_many():
    with pytest.raises(InvalidArgumentError):
        td.cluster(make_ds(np.zeros((3, 4, 4))), 4, 0)


def test_cluster_deterministic_and_permutation_equivariant():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(40, 6))
    a = td.kmeans(X, 4, seed=9).labels
    assert np.array_equal(a, td.kmeans(X, 4, seed=9).labels)
    perm = rng.permutation(40)
    b = td.kmeans(X[perm], 4, seed=9).labels
    part = lambda lab, idx: {frozenset(idx[lab == k]) for k in np.unique(lab)}  # noqa: E731
    assert part(a, np.arange(40)) == part(b, perm)


# ---------------------------------------------------------------- split

def test_split_half():
    ds = make_ds(np.zeros((10, 4, 4)))
    tr, va = td.split(ds, 0.5, seed=0)
    assert tr.n == 5 and va.n == 5


def test_split_deterministic_disjoint_cover():
    labels = np.random.default_rng(0).integers(0, 3, 50)
    a = td.split_indices(labels, 0.3, 11)
    b = td.split_indices(labels, 0.3, 11)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not set(a[0]) & set(a[1])
    assert sorted(np.concatenate(a)) == list(range(50))


def test_split_stratified_minority():
    labels = np.array([0] * 8 + [1] * 2)
    tr, va = td.split_indices(labels, 0.2, 3)
    assert (labels[va] == 1).sum() >= 1 and (labels[tr] == 1).sum() >= 1
    assert len(va) == 2


def test_split_rejects_fraction():
    for f in (0.0, 1.0, 1.5):
        with pytest.raises(InvalidArgumentError):
            td.split_indices(np.zeros(4), f, 0)
