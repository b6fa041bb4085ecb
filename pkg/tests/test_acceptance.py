"""Acceptance suite: one test per criterion, each recording a pass/fail line.

Run on its own with ``pytest tests/test_acceptance.py -v`` or
``python tests/test_acceptance.py``; the per-criterion lines are printed in
the "acceptance criteria" section of the terminal summary.
"""
import math
import time
from collections import defaultdict
from itertools import product

import numpy as np
import pytest

import trajdist_oracles as oracle
from conftest import ACCEPTANCE_LINES
from grad_cases import GRAD_CASES, leaf
from tvqtraj import autograd as ag
from tvqtraj import container, flysim as fs, persist, statmetrics as sm, tfr
from tvqtraj import enhancer as en, prior as pr, trajdist as td, vqvae as vq
from tvqtraj.errors import ChecksumError
from tvqtraj.toy import toy_dataset
from tvqtraj.trajdata import NormStats, split


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    assert ok, detail


# ---------------------------------------------------------------- 1. metric self-identity

def test_criterion_1_metric_self_identity():
    ds = toy_dataset(200, seed=11)
    t0 = time.perf_counter()
    rep = sm.evaluate(ds.values, ds.values, real_labels=ds.labels)
    elapsed = time.perf_counter() - t0
    worst = max(rep.fid, rep.mdd, rep.acd, rep.sd, rep.kd)
    record(1, worst < 1e-6 and rep.is_mean >= 1 and elapsed < 10,
           f"max(FID, MDD, ACD, SD, KD) = {worst:.2e}, IS = {rep.is_mean:.3f}, {elapsed:.1f} s")


# ---------------------------------------------------------------- 2. oracle equivalence

GRID = np.array([(x, y) for x in range(3) for y in range(3)], dtype=np.float64)


def _all_paths(n):
    return GRID[np.array(list(product(range(9), repeat=n)))]


def _kernel_values(As, Bs, eps):
    # the numba kernels behind the public wrappers, called directly for throughput
    out = defaultdict(list)
    for a, b in zip(As, Bs):
        out["dtw"].append(td._dtw(a, b))
        out["frechet_discrete"].append(td._frechet_discrete(a, b))
        out["erp"].append(td._erp(a, b, 0.0, 0.0))
        out["edr"].append(td._edr(a, b, eps))
        out["lcss_length"].append(td._lcss(a, b, eps))
    return {k: np.array(v) for k, v in out.items()}


def _compare_group(As, Bs, eps, chunk=20000):
    mismatches = 0
    for s in range(0, len(As), chunk):
        a, b = As[s:s + chunk], Bs[s:s + chunk]
        ref, got = oracle.batch(a, b, eps=eps), _kernel_values(a, b, eps)
        mismatches += sum(int(np.sum(ref[k] != got[k])) for k in ref)
    return mismatches


def test_criterion_2_distance_oracle_equivalence():
    t0 = time.perf_counter()
    eps = 1.0
    n_pairs = mismatches = 0
    # every pair whose two paths hold at most five points in total
    for n in range(1, 5):
        for m in range(1, 6 - n):
            P, Q = _all_paths(n), _all_paths(m)
            ia, ib = np.divmod(np.arange(len(P) * len(Q)), len(Q))
            As, Bs = np.ascontiguousarray(P[ia]), np.ascontiguousarray(Q[ib])
            mismatches += _compare_group(As, Bs, eps)
            n_pairs += len(As)
    # plus random pairs with up to five points on each side, through the public functions
    rng = np.random.default_rng(0)
    for n, m in product(range(1, 6), repeat=2):
        As, Bs = GRID[rng.integers(0, 9, (40, n))], GRID[rng.integers(0, 9, (40, m))]
        for e in (0.5, 1.0):
            ref = oracle.batch(As, Bs, eps=e)
            for k, (a, b) in enumerate(zip(As, Bs)):
                got = {"dtw": td.dtw(a, b), "frechet_discrete": td.frechet_discrete(a, b), "erp": td.erp(a, b),
                       "edr": td.edr(a, b, e), "lcss_length": td.lcss_length(a, b, e)}
                mismatches += sum(got[name] != ref[name][k] for name in got)
        n_pairs += len(As)
    # geometric metrics against the point/segment brute force
    geo_err = 0.0
    for n, m in product(range(1, 6), repeat=2):
        for a, b in zip(GRID[rng.integers(0, 9, (30, n))], GRID[rng.integers(0, 9, (30, m))]):
            geo_err = max(geo_err, abs(td.hausdorff(a, b) - oracle.hausdorff(a, b)),
                          abs(td.sspd(a, b) - oracle.sspd(a, b)))
    elapsed = time.perf_counter() - t0
    record(2, mismatches == 0 and geo_err <= 1e-9 and elapsed < 60,
           f"{n_pairs} pairs, {mismatches} DP mismatches, geometric error {geo_err:.1e}, {elapsed:.1f} s")


# ---------------------------------------------------------------- 3. Frechet bracketing

def test_criterion_3_frechet_bracketing():
    rng = np.random.default_rng(3)
    tol = 1e-6
    bad_order = bad_width = bad_decision = 0
    for _ in range(1000):
        A, B = rng.uniform(size=(rng.integers(2, 12), 2)), rng.uniform(size=(rng.integers(2, 12), 2))
        lo, hi = td.frechet_bracket(A, B, tol)
        h, f, fd = td.hausdorff(A, B), td.frechet(A, B, tol), td.frechet_discrete(A, B)
        bad_order += not (h <= f + 1e-12 and f <= fd + 1e-12)
        bad_width += not (hi - lo < tol)
        # hi is either a feasible bisection point or the discrete distance, itself a proven upper bound
        upper_ok = hi == fd or td.frechet_decide(A, B, hi)
        bad_decision += not (upper_ok and (lo == hi or not td.frechet_decide(A, B, lo)))
    record(3, bad_order == bad_width == bad_decision == 0,
           f"1000 pairs: {bad_order} order violations, {bad_width} wide brackets, "
           f"{bad_decision} inconsistent decisions")


# ---------------------------------------------------------------- 4. gradients

def test_criterion_4_gradient_suite():
    failures, worst = [], 0.0
    for name in sorted(GRAD_CASES):
        inputs, f = GRAD_CASES[name](np.random.default_rng(7))
        try:
            worst = max(worst, ag.check_grad(f, inputs, h=1e-3, rtol=1e-3, atol=1e-5))
        except AssertionError as exc:
            failures.append(f"{name}: {exc}")
    rng = np.random.default_rng(0)
    pre = leaf(rng, 4, 3)
    q = rng.normal(size=(4, 3))
    jac = np.zeros((12, 12))
    for i in range(12):
        pre.grad = None
        up = np.zeros(12, np.float32)
        up[i] = 1.0
        ag.backward(ag.sum_(ag.mul(ag.straight_through(pre, q), up.reshape(4, 3))))
        jac[i] = pre.grad.reshape(-1)
    st_ok = np.array_equal(jac, np.eye(12))
    record(4, not failures and st_ok,
           f"{len(GRAD_CASES)} ops, worst relative error {worst:.1e}, "
           f"straight-through Jacobian {'identity' if st_ok else 'wrong'}" + "; ".join([""] + failures))


# ---------------------------------------------------------------- 5. transforms

def test_criterion_5_transform_suite():
    rng = np.random.default_rng(5)
    x = rng.uniform(size=(64, 256, 4))
    spec = tfr.stft(x)
    rt = float(np.max(np.abs(tfr.istft(spec) - x)))
    exact = True
    for b in range(1, spec.n_bins):
        bands = tfr.split_bands(spec, b)
        exact &= np.array_equal(tfr.merge_bands(bands).data, spec.data)
        exact &= not np.any(bands.lf.data[..., b:, :]) and not np.any(bands.hf.data[..., :b, :])
    rel = max(abs(t - s) / t for t, s in (tfr.parseval_energies(xi) for xi in x[:16]))
    record(5, rt < 1e-5 and exact and rel <= 1e-4,
           f"round trip {rt:.1e}, split/merge {'bit-exact' if exact else 'inexact'}, Parseval {rel:.1e}")


# ---------------------------------------------------------------- 6. toy end-to-end

STAGE1_STEPS, STAGE2_STEPS, FCN_STEPS = 1500, 1000, 100


@pytest.mark.slow
def test_criterion_6_toy_end_to_end():
    t0 = time.perf_counter()
    ds = toy_dataset(200, n_families=2, seed=0)
    train, held = split(ds, 0.2, seed=0)
    model, _ = vq.stage1_train(train.values, vq.Stage1Config(steps=STAGE1_STEPS))
    rmse = vq.rmse(model.reconstruct(held.values), held.values)
    prior = pr.PriorModel(pr.PriorConfig(n_classes=2), seed=0)
    pr.stage2_train(prior, model, train.values, train.labels, pr.Stage2Config(steps=STAGE2_STEPS))
    fcn, _ = en.train_fcn(train.values, train.labels, 2, en.TrainConfig(steps=FCN_STEPS))
    per_class = [pr.generate(prior, model, 50, c, pr.GenerationConfig(seed=10 + c)) for c in (0, 1)]
    gen = np.concatenate(per_class)
    noise = np.random.default_rng(0).uniform(size=gen.shape)
    acc = float(np.mean(np.concatenate([fcn.predict(g) == c for c, g in enumerate(per_class)])))
    feats = {k: fcn.features(v) for k, v in (("held", held.values), ("gen", gen), ("noise", noise))}
    fid_gen, fid_noise = sm.fid(feats["held"], feats["gen"]), sm.fid(feats["held"], feats["noise"])
    mdd_gen, mdd_noise = sm.mdd(held.values, gen), sm.mdd(held.values, noise)
    elapsed = time.perf_counter() - t0
    ratio = fid_noise / max(fid_gen, 1e-300)
    record(6, rmse < 0.05 and ratio >= 10 and acc >= 0.7 and mdd_gen < mdd_noise and elapsed < 1200,
           f"RMSE {rmse:.4f}, FID gen {fid_gen:.3g} vs noise {fid_noise:.3g} (x{ratio:.1f}), "
           f"class accuracy {acc:.0%}, MDD {mdd_gen:.3g} vs {mdd_noise:.3g}, {elapsed / 60:.1f} min")


# ---------------------------------------------------------------- 7. decoding schedule

def test_criterion_7_maskgit_schedule():
    model = pr.PriorModel(pr.PriorConfig(n_classes=2, layers=1), seed=0)
    problems = []
    for T in (1, 2, 3, 5, 8, 12):
        trace = {}
        pr.generate_tokens(model, 4, 0, pr.GenerationConfig(iterations=T, seed=T), trace)
        for band, L in (("lf", model.config.l_lf), ("hf", model.config.l_hf)):
            counts = [c for c, _ in trace[band]]
            # ceil with a small slack so exact products such as cos(pi/3) * 8 = 4 are not bumped to 5
            want = [math.ceil(math.cos(math.pi / 2 * t / T) * L - 1e-9) for t in range(1, T + 1)]
            sets = [s for _, s in trace[band]]
            if counts != want:
                problems.append(f"T={T} {band}: {counts} != {want}")
            if not all(np.all(a <= b) for a, b in zip(sets, sets[1:])) or not sets[-1].all():
                problems.append(f"T={T} {band}: committed set not monotone/complete")
            if T == 1 and len(sets) != 1:
                problems.append("T=1 took more than one step")
    record(7, not problems, "T in 1,2,3,5,8,12 on both bands" + "; ".join([""] + problems))


# ---------------------------------------------------------------- 8. flyability

def _lines(duration_s, headings_deg, m=256):
    """Straight constant-speed great-circle-ish lines from a common origin, one per heading."""
    lat0, lon0, dist_m = 47.0, 5.0, 150_000.0
    t = np.linspace(0, 1, m)
    paths = []
    for h in np.radians(headings_deg):
        north, east = dist_m * np.cos(h) * t, dist_m * np.sin(h) * t
        lat = lat0 + np.degrees(north / fs.EARTH_RADIUS_M)
        lon = lon0 + np.degrees(east / (fs.EARTH_RADIUS_M * np.cos(np.radians(lat0))))
        alt = 20000.0 + 6000.0 * t
        paths.append(np.column_stack([lat, lon, alt, duration_s * t]))
    raw = np.stack(paths)
    lo, hi = raw.min(axis=(0, 1)), raw.max(axis=(0, 1))
    return (raw - lo) / (hi - lo), NormStats(lo, hi)


def test_criterion_8_flyability_sanity():
    headings = [0, 37, 90, 145, 200, 260, 315]
    feasible, norm = _lines(150_000.0 / 200.0, headings)
    fast, norm_fast = _lines(150_000.0 / (10 * fs.PerformanceEnvelope().v_max), headings)
    ok = fs.flyability_assess(feasible, norm)
    bad = fs.flyability_assess(fast, norm_fast)
    sspd_max = float(ok.report.column("sspd").max())
    ratio = bad.report.column("dtw") / ok.report.column("dtw")
    flagged = bad.unreached | (ratio >= 10)
    clean = all(v == [] for v in ok.violations + bad.violations)
    record(8, sspd_max < 0.01 and not ok.unreached.any() and flagged.all() and clean,
           f"feasible SSPD max {sspd_max:.2e}, fast set flagged {int(bad.unreached.sum())}/{len(headings)} "
           f"(DTW ratio min {ratio.min():.1f}), validator {'clean' if clean else 'violations'}")


# ---------------------------------------------------------------- 9. persistence

def test_criterion_9_persistence(tmp_path):
    ds = toy_dataset(10, m=64, seed=2)
    persist.save_dataset(tmp_path / "d.tvqv", ds, val_mask=np.arange(10) % 5 == 0)
    persist.save_dataset(tmp_path / "d2.tvqv", persist.load_dataset(tmp_path / "d.tvqv"),
                         val_mask=np.arange(10) % 5 == 0)
    model = vq.VQVAE(vq.VQConfig(m=64, hidden=8, dim=4, codebook_size=8, n_res=1), seed=0)
    model.init_codebooks(ds.values, np.random.default_rng(0))
    persist.save_vqvae(tmp_path / "c.tvqv", model)
    persist.save_vqvae(tmp_path / "c2.tvqv", persist.load_vqvae(tmp_path / "c.tvqv"))
    exact = all((tmp_path / f"{s}.tvqv").read_bytes() == (tmp_path / f"{s}2.tvqv").read_bytes()
                for s in ("d", "c"))
    undetected = 0
    rng = np.random.default_rng(9)
    for name in ("d.tvqv", "c.tvqv"):
        blob = (tmp_path / name).read_bytes()
        for i in sorted(set(rng.integers(0, len(blob), 300).tolist()) | {0, 5, len(blob) - 1}):
            bad = bytearray(blob)
            bad[i] ^= 1 << int(rng.integers(0, 8))
            try:
                container.decode(bytes(bad))
                undetected += 1
            except ChecksumError:
                pass
        for cut in (1, 4, len(blob) // 2):
            try:
                container.decode(blob[:-cut])
                undetected += 1
            except ChecksumError:
                pass
    record(9, exact and undetected == 0,
           f"round trip {'bit-exact' if exact else 'differs'}, {undetected} corruptions undetected")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
