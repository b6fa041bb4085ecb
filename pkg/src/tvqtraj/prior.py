"""Stage-2 masked token priors and double-pass iterative decoding.

Two bidirectional transformers model the LF and HF token sequences. The LF
model sees ``[class] + LF tokens``; the HF model sees ``[class] + projected
LF token embeddings + HF tokens``. Masked positions carry the id ``K`` and
the null class id is ``C``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import nn
from .autograd.tensor import Tensor
from .errors import ConfigurationError, InvalidArgumentError, TrainingError
from .rng import stream

log = logging.getLogger(__name__)

# guards ceil() against cos() rounding, e.g. cos(pi/2) = 6e-17 must count as 0
_COUNT_SLACK = 1e-9


@dataclass(frozen=True)
class PriorConfig:
    codebook_size: int = 64
    n_classes: int = 5
    l_lf: int = 8
    l_hf: int = 16
    dim: int = 64
    layers: int = 4
    heads: int = 4
    ff: int = 256
    p_uncond: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.p_uncond <= 1.0:
            raise InvalidArgumentError(f"p_uncond must be in [0, 1], got {self.p_uncond}")
        if self.codebook_size < 1 or self.n_classes < 1:
            raise InvalidArgumentError("codebook size and class count must be positive")


@dataclass(frozen=True)
class GenerationConfig:
    iterations: int = 8
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidArgumentError(f"iterations must be >= 1, got {self.iterations}")
        if not self.temperature > 0:
            raise InvalidArgumentError(f"temperature must be > 0, got {self.temperature}")


def schedule(t: int | float, T: int) -> float:
    """Cosine masking schedule: fraction of positions still masked after step ``t``."""
    return math.cos(math.pi / 2.0 * t / T)


def masked_count(fraction: float, L: int) -> int:
    return int(math.ceil(fraction * L - _COUNT_SLACK))


def mask_tokens(tokens: np.ndarray, fraction: float, rng: np.random.Generator,
                mask_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Mask ``ceil(fraction * L)`` positions per row, chosen without replacement."""
    if not 0.0 <= fraction <= 1.0:
        raise InvalidArgumentError(f"mask fraction must be in [0, 1], got {fraction}")
    tok = np.array(tokens, dtype=np.int64, copy=True)
    squeeze = tok.ndim == 1
    tok = np.atleast_2d(tok)
    B, L = tok.shape
    n = masked_count(fraction, L)
    mask = np.zeros((B, L), dtype=bool)
    for b in range(B):
        mask[b, rng.permutation(L)[:n]] = True
    tok[mask] = mask_id
    return (tok[0], mask[0]) if squeeze else (tok, mask)


# ----------------------------------------------------------------------------
# networks
# ----------------------------------------------------------------------------

class BandTransformer(nn.Module):
    """Bidirectional encoder over ``[class] + context + tokens``."""

    def __init__(self, cfg: PriorConfig, length: int, context: int, rng: np.random.Generator):
        K, D = cfg.codebook_size, cfg.dim
        self.length = length
        self.context = context
        self.tok = nn.Embedding(K + 1, D, rng)
        self.cls = nn.Embedding(cfg.n_classes + 1, D, rng)
        self.pos = nn.Embedding(1 + context + length, D, rng)
        if context:
            self.ctx_tok = nn.Embedding(K, D, rng)
            self.ctx_proj = nn.Linear(D, D, rng)
        self.blocks = [nn.TransformerBlock(D, cfg.heads, cfg.ff, rng) for _ in range(cfg.layers)]
        self.ln_f = nn.LayerNorm(D)
        self.head = nn.Linear(D, K, rng, init_std=0.02)

    def forward(self, tokens: np.ndarray, classes: np.ndarray, ctx: np.ndarray | None = None) -> Tensor:
        B, L = tokens.shape
        if L != self.length:
            raise InvalidArgumentError(f"expected {self.length} tokens, got {L}")
        parts = [self.cls(classes[:, None])]
        if self.context:
            if ctx is None or ctx.shape != (B, self.context):
                raise InvalidArgumentError(
                    f"context tokens must be [{B}, {self.context}], got "
                    f"{None if ctx is None else ctx.shape}")
            parts.append(self.ctx_proj(self.ctx_tok(ctx)))
        parts.append(self.tok(tokens))
        h = ag.concat(parts, axis=1) + self.pos.weight
        for block in self.blocks:
            h = block(h)
        h = self.ln_f(h[:, 1 + self.context:, :])
        return self.head(h)


class PriorModel(nn.Module):
    def __init__(self, cfg: PriorConfig = PriorConfig(), seed: int = 0):
        self.config = cfg
        rng = stream(seed, "prior-init")
        self.lf = BandTransformer(cfg, cfg.l_lf, 0, rng)
        self.hf = BandTransformer(cfg, cfg.l_hf, cfg.l_lf, rng)

    @property
    def mask_id(self) -> int:
        return self.config.codebook_size

    @property
    def null_class(self) -> int:
        return self.config.n_classes

    def logits_lf(self, tokens, classes) -> Tensor:
        return self.lf(np.asarray(tokens), np.asarray(classes))

    def logits_hf(self, tokens, classes, lf_tokens) -> Tensor:
        return self.hf(np.asarray(tokens), np.asarray(classes), np.asarray(lf_tokens))


# ----------------------------------------------------------------------------
# training objective
# ----------------------------------------------------------------------------

@dataclass
class PriorLoss:
    total: float
    lf: float
    hf: float


def _training_mask(B: int, L: int, rng: np.random.Generator) -> np.ndarray:
    mask = np.zeros((B, L), dtype=bool)
    for b in range(B):
        n = 0
        while n == 0:
            n = masked_count(schedule(rng.uniform(), 1.0), L)
        mask[b, rng.permutation(L)[:n]] = True
    return mask


def conditioning(labels: np.ndarray, p_uncond: float, null_id: int,
                 rng: np.random.Generator) -> np.ndarray:
    drop = rng.uniform(size=len(labels)) < p_uncond
    return np.where(drop, null_id, labels).astype(np.int64)


def masked_cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over masked positions only."""
    return ag.cross_entropy(logits, targets, np.asarray(mask, dtype=np.float32))


def prior_loss(model: PriorModel, tok_lf: np.ndarray, tok_hf: np.ndarray, labels: np.ndarray,
               rng: np.random.Generator, masks: tuple[np.ndarray, np.ndarray] | None = None,
               ) -> tuple[Tensor, PriorLoss]:
    """Masked-token cross-entropy, summed over the two bands.

    ``masks`` may fix the masked positions; otherwise a cosine-distributed
    fraction is drawn per sample (at least one position is always masked).
    """
    cfg = model.config
    tok_lf, tok_hf = np.asarray(tok_lf, np.int64), np.asarray(tok_hf, np.int64)
    labels = np.asarray(labels, np.int64)
    for t in (tok_lf, tok_hf):
        if t.size and (t.min() < 0 or t.max() >= cfg.codebook_size):
            raise InvalidArgumentError(f"token outside 0..{cfg.codebook_size - 1}")
    B = len(labels)
    if masks is None:
        masks = (_training_mask(B, cfg.l_lf, rng), _training_mask(B, cfg.l_hf, rng))
    m_lf, m_hf = masks
    if not m_lf.any() or not m_hf.any():
        raise InvalidArgumentError("loss needs at least one masked position per band")
    classes = conditioning(labels, cfg.p_uncond, model.null_class, rng)
    in_lf = np.where(m_lf, model.mask_id, tok_lf)
    in_hf = np.where(m_hf, model.mask_id, tok_hf)
    l_lf = masked_cross_entropy(model.logits_lf(in_lf, classes), tok_lf, m_lf)
    l_hf = masked_cross_entropy(model.logits_hf(in_hf, classes, tok_lf), tok_hf, m_hf)
    total = l_lf + l_hf
    return total, PriorLoss(float(total.data), float(l_lf.data), float(l_hf.data))


@dataclass(frozen=True)
class Stage2Config:
    steps: int = 2000
    batch: int = 32
    lr: float = 1e-3
    seed: int = 0


def tokenize_dataset(vqvae, values: np.ndarray, batch: int = 64) -> tuple[np.ndarray, np.ndarray]:
    if vqvae is None or getattr(vqvae, "book_lf", None) is None:
        raise ConfigurationError("stage 2 needs a trained stage-1 model (checkpoint missing)")
    outs = [vqvae.tokenize(values[i:i + batch]) for i in range(0, len(values), batch)]
    return np.concatenate([o[0] for o in outs]), np.concatenate([o[1] for o in outs])


def stage2_train(model: PriorModel, vqvae, values: np.ndarray, labels: np.ndarray,
                 config: Stage2Config = Stage2Config(),
                 tokens: tuple[np.ndarray, np.ndarray] | None = None) -> list[PriorLoss]:
    """Train the priors on tokens of a frozen stage-1 model."""
    tok_lf, tok_hf = tokens if tokens is not None else tokenize_dataset(vqvae, values)
    labels = np.asarray(labels, np.int64)
    if len(labels) != len(tok_lf):
        raise InvalidArgumentError(f"{len(labels)} labels for {len(tok_lf)} token sequences")
    data_rng = stream(config.seed, "data")
    mask_rng = stream(config.seed, "masking")
    opt = ag.Adam(model.named_parameters(), lr=config.lr)
    history: list[PriorLoss] = []
    n = len(labels)
    for step in range(config.steps):
        idx = data_rng.choice(n, size=min(config.batch, n), replace=False)
        opt.zero_grad()
        loss, parts = prior_loss(model, tok_lf[idx], tok_hf[idx], labels[idx], mask_rng)
        if not np.isfinite(parts.total):
            raise TrainingError(f"stage 2 aborted at step {step + 1}: non-finite loss")
        ag.backward(loss)
        try:
            opt.step()
        except TrainingError as exc:
            raise TrainingError(f"stage 2 aborted at step {step + 1}: {exc}") from None
        history.append(parts)
        if step % 200 == 0:
            log.info("stage2 step %d loss %.4f", step + 1, parts.total)
    return history


# ----------------------------------------------------------------------------
# iterative decoding
# ----------------------------------------------------------------------------

def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def decode_band(logit_fn, n: int, L: int, K: int, gen: GenerationConfig,
                rng: np.random.Generator, trace: list | None = None) -> np.ndarray:
    """One MaskGIT pass. ``logit_fn(tokens) -> [n, L, K]`` array."""
    T, temp = gen.iterations, gen.temperature
    tokens = np.full((n, L), K, dtype=np.int64)
    committed = np.zeros((n, L), dtype=bool)
    rows = np.arange(n)[:, None]
    for t in range(1, T + 1):
        logits = np.asarray(logit_fn(tokens), dtype=np.float64)
        gumbel = -np.log(-np.log(rng.uniform(1e-12, 1.0, size=logits.shape)))
        sampled = np.argmax(logits / temp + gumbel, axis=-1)
        prob = np.take_along_axis(_softmax(logits), sampled[..., None], -1)[..., 0]
        noise = -np.log(-np.log(rng.uniform(1e-12, 1.0, size=(n, L))))
        conf = prob + noise * temp * (1.0 - t / T)
        conf = np.where(committed, np.inf, conf)
        n_masked = masked_count(schedule(t, T), L)
        # highest confidence first, lower position wins ties
        order = np.lexsort((np.broadcast_to(np.arange(L), (n, L)), -conf), axis=-1)
        keep = np.zeros((n, L), dtype=bool)
        keep[rows, order[:, :L - n_masked]] = True
        new = keep & ~committed
        tokens = np.where(new, sampled, tokens)
        committed = keep
        tokens = np.where(committed, tokens, K)
        if trace is not None:
            trace.append((int((~committed).sum(axis=1).max()), committed.copy()))
    return tokens


def _class_ids(model: PriorModel, n: int, class_label: int | None) -> np.ndarray:
    C = model.config.n_classes
    if class_label is None:
        return np.full(n, model.null_class, dtype=np.int64)
    if not 0 <= int(class_label) < C:
        raise InvalidArgumentError(f"class {class_label} outside valid range 0..{C - 1}")
    return np.full(n, int(class_label), dtype=np.int64)


def generate_tokens(model: PriorModel, n: int, class_label: int | None,
                    gen: GenerationConfig = GenerationConfig(),
                    trace: dict | None = None) -> tuple[np.ndarray, np.ndarray]:
    cfg = model.config
    classes = _class_ids(model, n, class_label)
    rng = stream(gen.seed, "sampling")
    tr_lf: list = [] if trace is not None else None
    tr_hf: list = [] if trace is not None else None
    lf = decode_band(lambda tok: model.logits_lf(tok, classes).data, n, cfg.l_lf,
                     cfg.codebook_size, gen, rng, tr_lf)
    hf = decode_band(lambda tok: model.logits_hf(tok, classes, lf).data, n, cfg.l_hf,
                     cfg.codebook_size, gen, rng, tr_hf)
    if trace is not None:
        trace["lf"], trace["hf"] = tr_lf, tr_hf
    return lf, hf


def finalize(values: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and make the timedelta channel non-decreasing."""
    out = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    out[..., 3] = np.maximum.accumulate(out[..., 3], axis=-1)
    return out


def generate(model: PriorModel, vqvae, n: int, class_label: int | None = None,
             gen: GenerationConfig = GenerationConfig(), enhancer=None,
             batch: int = 64) -> np.ndarray:
    """``n`` trajectories ``[n, m, 4]`` in normalised units."""
    if n < 0:
        raise InvalidArgumentError(f"n must be >= 0, got {n}")
    _class_ids(model, 1, class_label)
    tok_lf, tok_hf = generate_tokens(model, n, class_label, gen)
    out = []
    for i in range(0, n, batch):
        x = vqvae.decode_tokens(tok_lf[i:i + batch], tok_hf[i:i + batch])
        if enhancer is not None:
            x = enhancer.apply(x)
        out.append(x)
    if not out:
        return np.zeros((0, vqvae.config.m, 4))
    return finalize(np.concatenate(out))
