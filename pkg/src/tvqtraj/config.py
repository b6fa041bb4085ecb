"""Plain-text ``key = value`` configuration with documented defaults.

Lines starting with ``#`` and blank lines are ignored. Every key must appear
in :data:`SCHEMA`; anything else is rejected before a command does any work.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from . import tfr
from .errors import ConfigurationError
from .flysim import PerformanceEnvelope
from .prior import GenerationConfig, PriorConfig, Stage2Config
from .enhancer import Stage3Config, TrainConfig
from .trajdist import DistanceParams
from .vqvae import Stage1Config, VQConfig

# key -> (default, description)
SCHEMA: dict[str, tuple[object, str]] = {
    "seed": (0, "master seed; every component draws from a named sub-stream of it"),
    "data.m": (256, "resampled trajectory length"),
    "data.clusters": (5, "k-means clusters used as class labels"),
    "data.val_fraction": (0.2, "held-out fraction per class"),
    "tfr.window": (tfr.DEFAULT_WINDOW, "STFT window length"),
    "tfr.hop": (tfr.DEFAULT_HOP, "STFT hop"),
    "tfr.b_split": (tfr.DEFAULT_B_SPLIT, "first frequency bin of the high band"),
    "vq.codebook_size": (64, "codebook entries per band"),
    "vq.dim": (32, "latent dimension"),
    "vq.hidden": (64, "encoder/decoder channels"),
    "vq.n_res": (2, "residual blocks per encoder/decoder"),
    "vq.decay": (0.99, "codebook EMA decay"),
    "vq.lambda": (1.0, "codebook loss weight"),
    "train.stage1.steps": (2000, "stage-1 optimiser steps"),
    "train.stage1.batch": (32, "stage-1 batch size"),
    "train.stage1.lr": (2e-3, "stage-1 learning rate"),
    "prior.dim": (64, "transformer width"),
    "prior.layers": (4, "transformer blocks per band"),
    "prior.heads": (4, "attention heads"),
    "prior.ff": (256, "feed-forward width"),
    "prior.p_uncond": (0.1, "probability of dropping the class during training"),
    "prior.t_iterations": (8, "decoding iterations T"),
    "train.stage2.steps": (2000, "stage-2 optimiser steps"),
    "train.stage2.batch": (32, "stage-2 batch size"),
    "train.stage2.lr": (1e-3, "stage-2 learning rate"),
    "train.fcn.steps": (300, "FCN classifier steps (trained alongside stage 3)"),
    "train.fcn.lr": (1e-3, "FCN learning rate"),
    "train.stage3.steps": (300, "stage-3 optimiser steps"),
    "train.stage3.batch": (32, "stage-3 batch size"),
    "train.stage3.lr": (1e-3, "stage-3 learning rate"),
    "train.stage3.perceptual_weight": (0.1, "weight of the FCN feature loss"),
    "gen.temperature": (1.0, "sampling temperature"),
    "sim.envelope.v_min": (60.0, "minimum ground speed, m/s"),
    "sim.envelope.v_max": (260.0, "maximum ground speed, m/s"),
    "sim.envelope.turn_rate": (3.0, "maximum turn rate, deg/s"),
    "sim.envelope.vs_max": (20.0, "maximum vertical rate, m/s"),
    "sim.envelope.a_max": (1.0, "maximum longitudinal acceleration, m/s^2"),
    "sim.stride": (16, "waypoint stride in samples"),
    "sim.dt": (1.0, "integration step, s"),
    "metrics.n_kernels": (500, "random convolution kernels for feature metrics"),
    "metrics.unit": ("normalized", "distance unit: normalized or km"),
    "metrics.eps": (0.05, "EDR/LCSS matching threshold"),
    "metrics.owd_cell": (0.01, "OWD grid cell size"),
    "metrics.frechet_tol": (1e-6, "continuous Frechet bisection tolerance"),
}


def _coerce(key: str, raw: str):
    default = SCHEMA[key][0]
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


@dataclass(frozen=True)
class Config:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = sorted(set(self.values) - set(SCHEMA))
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")

    def __getitem__(self, key: str):
        if key not in SCHEMA:
            raise ConfigurationError(f"unknown config key: {key}")
        return self.values.get(key, SCHEMA[key][0])

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "Config":
        values = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, raw = (s.strip() for s in line.partition("="))
            if not sep or not key:
                raise ConfigurationError(f"{source}:{n}: expected 'key = value', got {line!r}")
            if key not in SCHEMA:
                raise ConfigurationError(f"{source}:{n}: unknown config key {key!r}")
            values[key] = _coerce(key, raw)
        return cls(values)

    @classmethod
    def load(cls, path) -> "Config":
        if path is None:
            return cls()
        with open(path) as fh:
            return cls.parse(fh.read(), str(path))

    def with_overrides(self, **kw) -> "Config":
        return Config({**self.values, **{k: v for k, v in kw.items() if v is not None}})

    def dump(self) -> str:
        return "".join(f"# {doc}\n{key} = {self[key]}\n" for key, (_, doc) in SCHEMA.items())

    # ---- typed views -----------------------------------------------------

    def vq(self, m: int) -> VQConfig:
        return VQConfig(m=m, window=self["tfr.window"], hop=self["tfr.hop"], b_split=self["tfr.b_split"],
                        dim=self["vq.dim"], codebook_size=self["vq.codebook_size"], hidden=self["vq.hidden"],
                        n_res=self["vq.n_res"], decay=self["vq.decay"], lam=self["vq.lambda"])

    def stage1(self) -> Stage1Config:
        return Stage1Config(self["train.stage1.steps"], self["train.stage1.batch"], self["train.stage1.lr"],
                            seed=self["seed"])

    def prior(self, vq: VQConfig, n_classes: int) -> PriorConfig:
        return PriorConfig(codebook_size=vq.codebook_size, n_classes=n_classes, l_lf=vq.l_lf, l_hf=vq.l_hf,
                           dim=self["prior.dim"], layers=self["prior.layers"], heads=self["prior.heads"],
                           ff=self["prior.ff"], p_uncond=self["prior.p_uncond"])

    def stage2(self) -> Stage2Config:
        return Stage2Config(self["train.stage2.steps"], self["train.stage2.batch"], self["train.stage2.lr"],
                            self["seed"])

    def fcn(self) -> TrainConfig:
        return TrainConfig(self["train.fcn.steps"], self["train.stage3.batch"], self["train.fcn.lr"], self["seed"])

    def stage3(self) -> Stage3Config:
        return Stage3Config(self["train.stage3.steps"], self["train.stage3.batch"], self["train.stage3.lr"],
                            self["train.stage3.perceptual_weight"], self["seed"])

    def generation(self, seed: int | None = None) -> GenerationConfig:
        return GenerationConfig(self["prior.t_iterations"], self["gen.temperature"],
                                self["seed"] if seed is None else seed)

    def envelope(self) -> PerformanceEnvelope:
        return PerformanceEnvelope(*(self[f"sim.envelope.{k}"] for k in ("v_min", "v_max", "turn_rate",
                                                                        "vs_max", "a_max")))

    def distances(self) -> DistanceParams:
        # unit-specific defaults first, then only the keys the user actually set
        explicit = {k.split(".")[1]: v for k, v in self.values.items()
                    if k in ("metrics.eps", "metrics.owd_cell", "metrics.frechet_tol")}
        if self["metrics.unit"] == "km":
            return DistanceParams.km(**explicit)
        return DistanceParams(**explicit)
