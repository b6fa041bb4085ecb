"""Stage-3 fidelity enhancer and the FCN classifier used for perceptual loss and metrics."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import nn
from .autograd.tensor import Tensor
from .errors import ConfigurationError, InvalidArgumentError, TrainingError
from .rng import stream

log = logging.getLogger(__name__)

FEATURE_DIM = 64
PERCEPTUAL_WEIGHT = 0.1


def _channels_first(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != 4:
        raise InvalidArgumentError(f"expected trajectories [B, m, 4], got {x.shape}")
    return np.ascontiguousarray(np.swapaxes(x, 1, 2))


class FcnClassifier(nn.Module):
    """Three conv blocks (64/128/64 channels), global average pooling, linear head."""

    def __init__(self, n_classes: int, seed: int = 0, in_channels: int = 4):
        if n_classes < 1:
            raise InvalidArgumentError("FCN needs at least one class")
        rng = stream(seed, "fcn-init")
        self.n_classes = n_classes
        self.in_channels = in_channels
        spec = [(in_channels, 64, 8, 4), (64, 128, 5, 2), (128, FEATURE_DIM, 3, 1)]
        self.convs = [nn.Conv1d(a, b, k, rng, padding=p) for a, b, k, p in spec]
        self.norms = [nn.ChannelNorm(b) for _, b, _, _ in spec]
        self.head = nn.Linear(FEATURE_DIM, n_classes, rng)

    def feature_tensor(self, x_cf) -> Tensor:
        """Pooled features for a channels-first ``[B, 4, m]`` input (Tensor or array)."""
        h = ag.as_tensor(x_cf)
        for conv, norm in zip(self.convs, self.norms):
            h = ag.relu(norm(conv(h)))
        return ag.mean(h, axis=2)

    def logits(self, x_cf) -> Tensor:
        return self.head(self.feature_tensor(x_cf))

    def features(self, x, batch: int = 128) -> np.ndarray:
        x = _channels_first(x)
        return np.concatenate([self.feature_tensor(x[i:i + batch]).data
                               for i in range(0, len(x), batch)] or [np.zeros((0, FEATURE_DIM))])

    def predict_proba(self, x, batch: int = 128) -> np.ndarray:
        x = _channels_first(x)
        out = []
        for i in range(0, len(x), batch):
            z = self.logits(x[i:i + batch]).data.astype(np.float64)
            z -= z.max(axis=1, keepdims=True)
            p = np.exp(z)
            out.append(p / p.sum(axis=1, keepdims=True))
        return np.concatenate(out) if out else np.zeros((0, self.n_classes))

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.predict_proba(x), axis=1)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 300
    batch: int = 32
    lr: float = 1e-3
    seed: int = 0


def train_fcn(values: np.ndarray, labels: np.ndarray, n_classes: int | None = None,
              config: TrainConfig = TrainConfig()) -> tuple[FcnClassifier, float]:
    """Cross-entropy training on cluster labels; returns (model, training accuracy)."""
    labels = np.asarray(labels, dtype=np.int64)
    values = np.asarray(values, dtype=np.float32)
    if len(values) == 0 or len(values) != len(labels):
        raise InvalidArgumentError(f"{len(labels)} labels for {len(values)} trajectories")
    C = int(n_classes if n_classes is not None else labels.max() + 1)
    if len(np.unique(labels)) < 2:
        log.warning("FCN trained on a single class; inception score degenerates to 1")
    model = FcnClassifier(C, seed=config.seed)
    x_cf = _channels_first(values)
    rng = stream(config.seed, "fcn-data")
    opt = ag.Adam(model.named_parameters(), lr=config.lr)
    for step in range(config.steps if C > 1 else 0):
        idx = rng.choice(len(values), size=min(config.batch, len(values)), replace=False)
        opt.zero_grad()
        loss = ag.cross_entropy(model.logits(x_cf[idx]), labels[idx])
        if not np.isfinite(float(loss.data)):
            raise TrainingError(f"FCN training aborted at step {step + 1}: non-finite loss")
        ag.backward(loss)
        opt.step()
    acc = float(np.mean(model.predict(values) == labels))
    log.info("FCN training accuracy %.3f", acc)
    return model, acc


class EnhancerNet(nn.Module):
    """Residual conv refiner; the last layer starts at zero so the initial map is the identity."""

    def __init__(self, seed: int = 0, hidden: int = 32, kernel: int = 5):
        rng = stream(seed, "enhancer-init")
        self.hidden, self.kernel = hidden, kernel
        p = kernel // 2
        self.conv1 = nn.Conv1d(4, hidden, kernel, rng, padding=p)
        self.conv2 = nn.Conv1d(hidden, hidden, kernel, rng, padding=p)
        self.conv3 = nn.Conv1d(hidden, 4, kernel, rng, padding=p, zero_init=True)

    def forward(self, x_cf) -> Tensor:
        x = ag.as_tensor(x_cf)
        h = ag.relu(self.conv1(x))
        h = ag.relu(self.conv2(h))
        return x + self.conv3(h)

    def apply(self, x, batch: int = 128) -> np.ndarray:
        """Enhance ``[B, m, 4]`` trajectories; output clamped to [0, 1]."""
        x_cf = _channels_first(x)
        out = [self.forward(x_cf[i:i + batch]).data for i in range(0, len(x_cf), batch)]
        y = np.concatenate(out) if out else x_cf
        return np.clip(np.swapaxes(y, 1, 2).astype(np.float64), 0.0, 1.0)


def enhance(enhancer: EnhancerNet, traj: np.ndarray) -> np.ndarray:
    single = np.asarray(traj).ndim == 2
    out = enhancer.apply(traj)
    return out[0] if single else out


@dataclass(frozen=True)
class Stage3Config:
    steps: int = 300
    batch: int = 32
    lr: float = 1e-3
    perceptual_weight: float = PERCEPTUAL_WEIGHT
    seed: int = 0


def enhancer_loss(enhancer: EnhancerNet, fcn: FcnClassifier, recon_cf: np.ndarray,
                  real_cf: np.ndarray, w_p: float) -> Tensor:
    out = enhancer(recon_cf)
    loss = ag.mse(out, real_cf)
    if w_p:
        target = fcn.feature_tensor(real_cf).data
        loss = loss + ag.mse(fcn.feature_tensor(out), target) * w_p
    return loss


def stage3_train(enhancer: EnhancerNet, vqvae, values: np.ndarray, fcn: FcnClassifier | None,
                 config: Stage3Config = Stage3Config()) -> list[float]:
    """Fit the enhancer on (stage-1 reconstruction, real) pairs."""
    if vqvae is None or getattr(vqvae, "book_lf", None) is None:
        raise ConfigurationError("stage 3 needs a trained stage-1 model (checkpoint missing)")
    if fcn is None:
        raise ConfigurationError("stage 3 needs a trained FCN classifier (checkpoint missing)")
    values = np.asarray(values, dtype=np.float32)
    real_cf = _channels_first(values)
    recon_cf = _channels_first(vqvae.reconstruct(values))
    rng = stream(config.seed, "enhancer-data")
    opt = ag.Adam(enhancer.named_parameters(), lr=config.lr)
    history = []
    for step in range(config.steps):
        idx = rng.choice(len(values), size=min(config.batch, len(values)), replace=False)
        opt.zero_grad()
        fcn.zero_grad()
        loss = enhancer_loss(enhancer, fcn, recon_cf[idx], real_cf[idx], config.perceptual_weight)
        if not np.isfinite(float(loss.data)):
            raise TrainingError(f"stage 3 aborted at step {step + 1}: non-finite loss")
        ag.backward(loss)
        opt.step()
        history.append(float(loss.data))
    fcn.zero_grad()
    return history
