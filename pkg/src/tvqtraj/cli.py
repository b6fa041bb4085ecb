"""Command-line entry point: preprocess, train, generate, evaluate, flyability."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import persist, plotting
from . import statmetrics as sm
from .config import Config
from .enhancer import EnhancerNet, stage3_train, train_fcn
from .errors import ConfigurationError, TvqError
from .flysim import flyability_assess
from .prior import PriorModel, generate, stage2_train
from .trajdata import CHANNELS, Dataset, build_dataset, denormalize, ingest_with_report, split_indices
from .trajdist import METRICS, PERCENTILES
from .vqvae import rmse, stage1_train

log = logging.getLogger("tvqtraj")

CKPT = {"stage1": "stage1.tvqv", "stage2": "stage2.tvqv", "fcn": "fcn.tvqv", "stage3": "stage3.tvqv",
        "norm": "norm.tvqv"}


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows([[repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r] for r in rows])


def _ckpt(directory: Path, key: str) -> Path:
    path = Path(directory) / CKPT[key]
    if not path.exists():
        raise ConfigurationError(f"missing {key} checkpoint: {path}")
    return path


def _finite_or_none(x):
    return None if x is None or not np.isfinite(x) else float(x)


# ---------------------------------------------------------------- preprocess

def cmd_preprocess(args, cfg: Config) -> dict:
    flights, report = ingest_with_report(args.input)
    ds = build_dataset(flights, cfg["data.m"], cfg["data.clusters"], cfg["seed"])
    _, val_idx = split_indices(ds.labels, cfg["data.val_fraction"], cfg["seed"])
    mask = np.zeros(ds.n, dtype=np.uint8)
    mask[val_idx] = 1
    out = Path(args.output)
    persist.save_dataset(out, ds, mask)
    summary = {
        "n": ds.n, "m": ds.m, "n_classes": ds.n_classes, "n_train": int(ds.n - mask.sum()),
        "n_val": int(mask.sum()), "class_counts": np.bincount(ds.labels, minlength=ds.n_classes).tolist(),
        "ingest": asdict(report),
        "channels": {c: {"min": float(ds.norm.minimum[i]), "max": float(ds.norm.maximum[i]),
                         "mean_normalized": float(ds.values[..., i].mean())} for i, c in enumerate(CHANNELS)},
    }
    _write_json(out.with_suffix(".json"), summary)
    return summary


# ---------------------------------------------------------------- train

def _loss_outputs(out: Path, stage: str, header, rows) -> None:
    _write_csv(out / f"{stage}_loss.csv", ["step", *header], [[i + 1, *r] for i, r in enumerate(rows)])
    cols = np.asarray(rows, dtype=np.float64).reshape(len(rows), -1)
    plotting.loss_curve({h: cols[:, j] for j, h in enumerate(header)}, out / f"{stage}_loss.svg")


def cmd_train(args, cfg: Config) -> dict:
    out = Path(args.out)
    if args.stage == 1:
        train = persist.load_dataset(args.data, "train")
    elif args.stage == 2:
        vqvae = persist.load_vqvae(_ckpt(out, "stage1"))
        train = persist.load_dataset(args.data, "train")
    else:
        vqvae = persist.load_vqvae(_ckpt(out, "stage1"))
        _ckpt(out, "stage2")
        train = persist.load_dataset(args.data, "train")
    out.mkdir(parents=True, exist_ok=True)

    if args.stage == 1:
        model, hist = stage1_train(train.values, cfg.stage1(), cfg.vq(train.m))
        persist.save_vqvae(out / CKPT["stage1"], model)
        persist.save_norm(out / CKPT["norm"], train.norm)
        header = ["total", "reconstruction", "time", "spectral", "codebook"]
        _loss_outputs(out, "stage1", header, [[getattr(h, k) for k in header] for h in hist])
        result = {"steps": len(hist), "final_loss": hist[-1].total}
        try:
            val = persist.load_dataset(args.data, "val")
            result["val_rmse"] = rmse(model.reconstruct(val.values), val.values)
        except ConfigurationError:
            pass
        return result

    if args.stage == 2:
        prior = PriorModel(cfg.prior(vqvae.config, train.n_classes), seed=cfg["seed"])
        hist = stage2_train(prior, vqvae, train.values, train.labels, cfg.stage2())
        persist.save_prior(out / CKPT["stage2"], prior)
        _loss_outputs(out, "stage2", ["total", "lf", "hf"], [[h.total, h.lf, h.hf] for h in hist])
        return {"steps": len(hist), "final_loss": hist[-1].total}

    fcn_path = out / CKPT["fcn"]
    if fcn_path.exists():
        fcn = persist.load_fcn(fcn_path)
    else:
        fcn, acc = train_fcn(train.values, train.labels, train.n_classes, cfg.fcn())
        persist.save_fcn(fcn_path, fcn, acc)
    enh = EnhancerNet(seed=cfg["seed"])
    hist = stage3_train(enh, vqvae, train.values, fcn, cfg.stage3())
    persist.save_enhancer(out / CKPT["stage3"], enh)
    _loss_outputs(out, "stage3", ["total"], [[h] for h in hist])
    return {"steps": len(hist), "final_loss": hist[-1]}


# ---------------------------------------------------------------- generate

def cmd_generate(args, cfg: Config) -> dict:
    ck = Path(args.checkpoint_dir)
    vqvae = persist.load_vqvae(_ckpt(ck, "stage1"))
    prior = persist.load_prior(_ckpt(ck, "stage2"))
    norm = persist.load_norm(_ckpt(ck, "norm"))
    enh = persist.load_enhancer(_ckpt(ck, "stage3")) if args.enhance else None
    overrides = {"gen.temperature": args.temperature, "prior.t_iterations": args.iterations, "seed": args.seed}
    gen_cfg = cfg.with_overrides(**overrides).generation()
    values = generate(prior, vqvae, args.n, args.class_id, gen_cfg, enhancer=enh)
    labels = np.full(args.n, -1 if args.class_id is None else args.class_id, dtype=np.int64)
    ds = Dataset(values, labels, norm, prior.config.n_classes, [f"gen-{i:05d}" for i in range(args.n)])
    out = Path(args.out)
    persist.save_dataset(out, ds)
    phys = denormalize(values, norm)
    rows = [[ds.flight_ids[i], j, *phys[i, j]] for i in range(args.n) for j in range(values.shape[1])]
    _write_csv(out.with_suffix(".csv"), ["flight_id", "step", *CHANNELS], rows)
    return {"n": args.n, "class": args.class_id, "temperature": gen_cfg.temperature,
            "iterations": gen_cfg.iterations, "seed": gen_cfg.seed, "enhanced": bool(args.enhance)}


# ---------------------------------------------------------------- evaluate

def cmd_evaluate(args, cfg: Config) -> dict:
    real = persist.load_dataset(args.real, args.real_part)
    synth = persist.load_dataset(args.synthetic)
    if real.values.shape[1:] != synth.values.shape[1:]:
        raise ConfigurationError(f"shape mismatch: real {real.values.shape} vs synthetic {synth.values.shape}")
    fcn = persist.load_fcn(args.fcn) if args.fcn else None
    rep = sm.evaluate(real.values, synth.values, fcn=fcn, real_labels=real.labels,
                      n_kernels=cfg["metrics.n_kernels"], seed=cfg["seed"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = {"fid": _finite_or_none(rep.fid), "is": {"mean": rep.is_mean, "std": rep.is_std},
              "mdd": rep.mdd, "acd": rep.acd, "sd": rep.sd, "kd": rep.kd, "feature_source": rep.feature_source,
              "n_real": rep.n_real, "n_synthetic": rep.n_gen}
    _write_json(out / "report.json", report)

    pca = sm.pca_project(real.values, synth.values)
    _write_csv(out / "pca.csv", ["set", "pc1", "pc2"],
               [["real", *r] for r in pca.real] + [["synthetic", *r] for r in pca.gen])
    plotting.pca_scatter(pca, out / "pca.svg")

    rb, gb = sm.timeseries_bands(real.values), sm.timeseries_bands(synth.values)
    header = ["set", "step"] + [f"{c}_{s}" for c in CHANNELS for s in ("mean", "lo", "hi")]
    rows = [[name, t, *[b[k][t, c] for c in range(len(CHANNELS)) for k in range(3)]]
            for name, b in (("real", rb), ("synthetic", gb)) for t in range(real.m)]
    _write_csv(out / "bands.csv", header, rows)
    plotting.bands(rb, gb, out / "bands.svg")

    cr, cg, cd = sm.correlation_report(real.values, synth.values)
    _write_csv(out / "correlations.csv", ["matrix", "row", *CHANNELS],
               [[name, CHANNELS[i], *mat[i]] for name, mat in (("real", cr), ("synthetic", cg), ("abs_diff", cd))
                for i in range(len(CHANNELS))])
    plotting.heatmap(cr, CHANNELS, out / "correlation_real.svg", "real")
    plotting.heatmap(cg, CHANNELS, out / "correlation_synthetic.svg", "synthetic")

    dr = sm.duration_distribution(real.values, real.norm)
    dg = sm.duration_distribution(synth.values, real.norm, bins=len(dr.counts))
    _write_csv(out / "durations.csv", ["set", "duration_s"],
               [["real", d] for d in dr.durations] + [["synthetic", d] for d in dg.durations])
    plotting.durations(dr, dg, out / "durations.svg")
    return report


# ---------------------------------------------------------------- flyability

def cmd_flyability(args, cfg: Config) -> dict:
    synth = persist.load_dataset(args.synthetic)
    norm = persist.load_norm(args.norm) if args.norm else synth.norm
    env_keys = {"v_min": args.v_min, "v_max": args.v_max, "turn_rate": args.turn_rate,
                "vs_max": args.vs_max, "a_max": args.a_max}
    cfg = cfg.with_overrides(**{f"sim.envelope.{k}": v for k, v in env_keys.items()},
                             **{"sim.stride": args.stride, "metrics.unit": args.unit})
    res = flyability_assess(synth.values, norm, cfg.envelope(), cfg.distances(), cfg["sim.stride"], cfg["sim.dt"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rep = res.report
    summary = {**rep.summary(), "unreached": res.unreached.tolist(),
               "n_unreached": int(res.unreached.sum()), "envelope": asdict(cfg.envelope()),
               "stride": cfg["sim.stride"], "envelope_violations": int(sum(bool(v) for v in res.violations))}
    _write_json(out / "flyability.json", summary)
    ids = synth.flight_ids or [str(i) for i in range(synth.n)]
    _write_csv(out / "pairs.csv", ["flight_id", *METRICS, "unreached"],
               [[ids[i], *rep.values[i], int(res.unreached[i])] for i in range(len(rep.values))])
    _write_csv(out / "percentiles.csv", ["percentile", *METRICS],
               [[int(p), *row] for p, row in zip(PERCENTILES, rep.percentiles)])
    corr = rep.correlation
    _write_csv(out / "metric_correlation.csv", ["metric", *METRICS],
               [[m, *["" if np.isnan(v) else v for v in corr[i]]] for i, m in enumerate(METRICS)])
    plotting.percentile_curves(PERCENTILES, rep.percentiles, METRICS, out / "percentiles.svg", rep.params.unit)
    plotting.heatmap(corr, METRICS, out / "metric_correlation.svg", f"metric correlation ({rep.params.unit})")
    return {"n": len(rep.values), "n_unreached": summary["n_unreached"], "unit": rep.params.unit,
            "median": {m: float(np.median(rep.column(m))) for m in METRICS}}


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tvqtraj", description=__doc__)
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preprocess", help="ingest a flight CSV into a dataset container")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--m", type=int)
    s.add_argument("--clusters", type=int)
    s.add_argument("--val-fraction", type=float)
    s.add_argument("--seed", type=int)

    s = sub.add_parser("train", help="train one stage")
    s.add_argument("--stage", type=int, choices=(1, 2, 3), required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="checkpoint directory")
    s.add_argument("--steps", type=int, help="override the configured step count for this stage")
    s.add_argument("--seed", type=int)

    s = sub.add_parser("generate", help="sample synthetic trajectories")
    s.add_argument("--checkpoint-dir", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--class", dest="class_id", type=int)
    s.add_argument("--temperature", type=float)
    s.add_argument("--iterations", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--enhance", action="store_true")
    s.add_argument("--out", required=True)

    s = sub.add_parser("evaluate", help="quality and statistical metrics")
    s.add_argument("--real", required=True)
    s.add_argument("--real-part", choices=("all", "train", "val"), default="all")
    s.add_argument("--synthetic", required=True)
    s.add_argument("--fcn", help="FCN checkpoint for feature-based metrics")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)

    s = sub.add_parser("flyability", help="simulate and score flyability")
    s.add_argument("--synthetic", required=True)
    s.add_argument("--norm", help="dataset or norm container with the normalisation bounds")
    s.add_argument("--out", required=True)
    for flag in ("v-min", "v-max", "turn-rate", "vs-max", "a-max"):
        s.add_argument(f"--{flag}", type=float)
    s.add_argument("--stride", type=int)
    s.add_argument("--unit", choices=("normalized", "km"))
    return p


COMMANDS = {"preprocess": cmd_preprocess, "train": cmd_train, "generate": cmd_generate,
            "evaluate": cmd_evaluate, "flyability": cmd_flyability}


def _apply_flags(args, cfg: Config) -> Config:
    flags = {"seed": getattr(args, "seed", None)}
    if args.command == "preprocess":
        flags.update({"data.m": args.m, "data.clusters": args.clusters, "data.val_fraction": args.val_fraction})
    if args.command == "train" and args.steps is not None:
        key = {1: ["train.stage1.steps"], 2: ["train.stage2.steps"],
               3: ["train.stage3.steps", "train.fcn.steps"]}[args.stage]
        flags.update({k: args.steps for k in key})
    return cfg.with_overrides(**flags)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_flags(args, Config.load(args.config))
        result = COMMANDS[args.command](args, cfg)
    except (TvqError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(result, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
