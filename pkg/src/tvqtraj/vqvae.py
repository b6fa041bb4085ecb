"""Stage-1 model: dual-band encoders, EMA vector quantizers and decoders.

A batch of trajectories ``[B, m, 4]`` is mapped to real spectrogram planes
``[B, 4*F*2, W]`` (channel-major, see :func:`tvqtraj.tfr.to_planes`). Each band
sees the planes with the other band's bins zeroed. Encoders run 1-D
convolutions along the frame axis; the two decoded bands are masked, summed
and sent back through the linear inverse STFT.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import tfr
from .autograd import nn
from .autograd.tensor import Tensor
from .errors import ConfigurationError, InvalidArgumentError, TrainingError
from .rng import stream

log = logging.getLogger(__name__)

N_CHANNELS = 4
COMMITMENT_WEIGHT = 0.25
EMA_EPS = 1e-7
DEAD_CODE_STEPS = 256
MAG_EPS = 1e-8


@dataclass(frozen=True)
class VQConfig:
    m: int = 256
    window: int = tfr.DEFAULT_WINDOW
    hop: int = tfr.DEFAULT_HOP
    b_split: int = tfr.DEFAULT_B_SPLIT
    dim: int = 32
    codebook_size: int = 64
    hidden: int = 64
    n_res: int = 2
    lf_down: int = 2   # 32 frames -> 8 tokens
    hf_down: int = 1   # 32 frames -> 16 tokens
    decay: float = 0.99
    lam: float = 1.0

    @property
    def n_bins(self) -> int:
        return self.window // 2 + 1

    @property
    def n_frames(self) -> int:
        return self.m // self.hop

    @property
    def plane_channels(self) -> int:
        return N_CHANNELS * self.n_bins * 2

    @property
    def l_lf(self) -> int:
        return self.n_frames // 2 ** self.lf_down

    @property
    def l_hf(self) -> int:
        return self.n_frames // 2 ** self.hf_down


# ----------------------------------------------------------------------------
# codebook
# ----------------------------------------------------------------------------

@dataclass
class Codebook:
    embeddings: np.ndarray          # [K, d]
    ema_counts: np.ndarray          # [K]
    ema_sums: np.ndarray            # [K, d]
    decay: float = 0.99
    unused: np.ndarray = field(default=None)  # consecutive steps without assignment

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        K = self.embeddings.shape[0] if self.embeddings.ndim == 2 else 0
        if K < 1:
            raise ConfigurationError("codebook is empty")
        self.ema_counts = np.asarray(self.ema_counts, dtype=np.float64)
        self.ema_sums = np.asarray(self.ema_sums, dtype=np.float64)
        if self.unused is None:
            self.unused = np.zeros(K, dtype=np.int64)

    @classmethod
    def fresh(cls, embeddings: np.ndarray, decay: float = 0.99) -> "Codebook":
        e = np.asarray(embeddings, dtype=np.float64)
        return cls(e.copy(), np.zeros(len(e)), np.zeros_like(e), decay)

    @property
    def K(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def copy(self) -> "Codebook":
        return Codebook(self.embeddings.copy(), self.ema_counts.copy(), self.ema_sums.copy(),
                        self.decay, self.unused.copy())


def nearest(z: np.ndarray, embeddings: np.ndarray) -> np.ndarray:
    """Index of the nearest row of ``embeddings`` for each row of ``z``; lowest index on ties."""
    z = np.asarray(z, dtype=np.float64)
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2 or len(e) == 0:
        raise ConfigurationError("codebook is empty")
    if z.shape[-1] != e.shape[1]:
        raise InvalidArgumentError(f"latent dim {z.shape[-1]} != codebook dim {e.shape[1]}")
    flat = z.reshape(-1, e.shape[1])
    d2 = ((flat[:, None, :] - e[None, :, :]) ** 2).sum(-1)
    return np.argmin(d2, axis=1).reshape(z.shape[:-1])


@dataclass
class QuantizeResult:
    z_q: Tensor            # straight-through output, forward value = codebook rows
    tokens: np.ndarray     # int64, shape z.shape[:-1]
    commitment: Tensor     # mean squared distance to the frozen codes
    ema_term: float        # same distance seen from the codebook side (no gradient)


def quantize(z, book: Codebook) -> QuantizeResult:
    zt = z if isinstance(z, Tensor) else Tensor(z)
    tokens = nearest(zt.data, book.embeddings)
    codes = book.embeddings[tokens].astype(zt.data.dtype)
    commitment = ag.mse(zt, codes)
    return QuantizeResult(ag.straight_through(zt, codes), tokens, commitment,
                          float(commitment.data))


def ema_update(book: Codebook, tokens: np.ndarray, latents: np.ndarray,
               rng: np.random.Generator | None = None) -> Codebook:
    """Return a new codebook after one EMA step on a batch of assignments."""
    out = book.copy()
    flat = np.asarray(latents, dtype=np.float64).reshape(-1, book.dim)
    idx = np.asarray(tokens).reshape(-1)
    counts = np.bincount(idx, minlength=book.K).astype(np.float64)
    sums = np.zeros_like(book.ema_sums)
    np.add.at(sums, idx, flat)
    g = book.decay
    out.ema_counts = g * book.ema_counts + (1.0 - g) * counts
    out.ema_sums = g * book.ema_sums + (1.0 - g) * sums
    total = out.ema_counts.sum()
    smoothed = (out.ema_counts + EMA_EPS) / (total + book.K * EMA_EPS) * total
    live = out.ema_counts > 0
    out.embeddings[live] = out.ema_sums[live] / smoothed[live, None]
    out.unused = np.where(counts > 0, 0, book.unused + 1)
    dead = np.flatnonzero(out.unused >= DEAD_CODE_STEPS)
    if dead.size and rng is not None and len(flat):
        pick = rng.integers(0, len(flat), size=dead.size)
        out.embeddings[dead] = flat[pick]
        out.ema_counts[dead] = 0.0
        out.ema_sums[dead] = 0.0
        out.unused[dead] = 0
    return out


def perplexity(tokens: np.ndarray, K: int) -> float:
    counts = np.bincount(np.asarray(tokens).reshape(-1), minlength=K).astype(np.float64)
    p = counts / counts.sum()
    nz = p[p > 0]
    return float(np.exp(-(nz * np.log(nz)).sum()))


# ----------------------------------------------------------------------------
# networks
# ----------------------------------------------------------------------------

class BandEncoder(nn.Module):
    def __init__(self, c_in: int, hidden: int, dim: int, n_down: int, n_res: int,
                 rng: np.random.Generator):
        self.conv_in = nn.Conv1d(c_in, hidden, 3, rng, padding=1)
        self.stages = []
        for _ in range(n_down):
            self.stages.extend(nn.ResBlock1d(hidden, rng) for _ in range(n_res))
            self.stages.append(nn.Conv1d(hidden, hidden, 4, rng, stride=2, padding=1))
        self.stages.extend(nn.ResBlock1d(hidden, rng) for _ in range(n_res))
        self.conv_out = nn.Conv1d(hidden, dim, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv_in(x)
        for layer in self.stages:
            h = layer(h)
        return self.conv_out(ag.relu(h))


class BandDecoder(nn.Module):
    def __init__(self, dim: int, hidden: int, c_out: int, n_up: int, n_res: int,
                 rng: np.random.Generator):
        self.conv_in = nn.Conv1d(dim, hidden, 3, rng, padding=1)
        self.stages = []
        for _ in range(n_up):
            self.stages.extend(nn.ResBlock1d(hidden, rng) for _ in range(n_res))
            self.stages.append(nn.ConvTranspose1d(hidden, hidden, 4, rng, stride=2, padding=1))
        self.stages.extend(nn.ResBlock1d(hidden, rng) for _ in range(n_res))
        self.conv_out = nn.Conv1d(hidden, c_out, 3, rng, padding=1)

    def forward(self, z: Tensor) -> Tensor:
        h = self.conv_in(z)
        for layer in self.stages:
            h = layer(h)
        return self.conv_out(ag.relu(h))


@dataclass
class Stage1Losses:
    total: float
    reconstruction: float
    time: float
    spectral: float
    codebook: float
    lam: float


class VQVAE(nn.Module):
    def __init__(self, config: VQConfig = VQConfig(), seed: int = 0):
        self.config = config
        c = config
        if c.m % c.hop or c.n_frames % 2 ** max(c.lf_down, c.hf_down):
            raise ConfigurationError(f"m={c.m} incompatible with hop {c.hop} and downsampling")
        rng = stream(seed, "model-init")
        C = c.plane_channels
        self.enc_lf = BandEncoder(C, c.hidden, c.dim, c.lf_down, c.n_res, rng)
        self.enc_hf = BandEncoder(C, c.hidden, c.dim, c.hf_down, c.n_res, rng)
        self.dec_lf = BandDecoder(c.dim, c.hidden, C, c.lf_down, c.n_res, rng)
        self.dec_hf = BandDecoder(c.dim, c.hidden, C, c.hf_down, c.n_res, rng)
        self.book_lf: Codebook | None = None
        self.book_hf: Codebook | None = None
        F, W = c.n_bins, c.n_frames
        mask = lambda band: np.broadcast_to(  # noqa: E731
            tfr.band_mask(F, c.b_split, band)[None, :, None, None], (N_CHANNELS, F, 2, W)
        ).reshape(C, W)
        self._mask_lf = mask("lf").astype(np.float32)[:, :1]
        self._mask_hf = mask("hf").astype(np.float32)[:, :1]
        self._S = tfr.stft_matrix(c.m, c.window, c.hop).astype(np.float32)
        self._I = tfr.istft_matrix(c.m, c.window, c.hop).astype(np.float32)
        # amplitude-normalised spectrum: a constant signal c has DC magnitude c
        self._mag_scale = float(1.0 / tfr.hann(c.window).sum())

    # -- spectral plumbing ------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float32)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1:] != (self.config.m, N_CHANNELS):
            raise InvalidArgumentError(
                f"expected trajectories [B, {self.config.m}, {N_CHANNELS}], got {x.shape}")
        return x

    def planes(self, x: np.ndarray) -> np.ndarray:
        """``[B, m, 4]`` -> real spectrogram planes ``[B, 4*F*2, W]``."""
        B = x.shape[0]
        c = self.config
        p = np.swapaxes(x, 1, 2) @ self._S  # [B, 4, F*2*W]
        return p.reshape(B, c.plane_channels, c.n_frames)

    def band_inputs(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = self.planes(x)
        return p * self._mask_lf, p * self._mask_hf

    def _magnitudes(self, sig_T) -> Tensor:
        """Spectral magnitudes of ``[B, 4, m]`` signals (Tensor or array)."""
        c = self.config
        B = sig_T.shape[0]
        p = ag.matmul(sig_T, self._S).reshape(B, N_CHANNELS, c.n_bins, 2, c.n_frames)
        re, im = p[:, :, :, 0, :], p[:, :, :, 1, :]
        return ag.sqrt(ag.square(re) + ag.square(im), eps=MAG_EPS) * self._mag_scale

    # -- model pieces ------------------------------------------------------

    def encode(self, x) -> tuple[Tensor, Tensor]:
        x = self._check_input(x)
        lf, hf = self.band_inputs(x)
        z_lf = self.enc_lf(Tensor(lf)).transpose(0, 2, 1)
        z_hf = self.enc_hf(Tensor(hf)).transpose(0, 2, 1)
        return z_lf, z_hf

    def _require_books(self):
        if self.book_lf is None or self.book_hf is None:
            raise ConfigurationError("codebooks are not initialised; train stage 1 first")

    def init_codebooks(self, x, rng: np.random.Generator):
        """Seed each codebook with latents drawn from a batch."""
        z_lf, z_hf = self.encode(x)
        books = []
        for z in (z_lf, z_hf):
            flat = z.data.reshape(-1, self.config.dim).astype(np.float64)
            pick = rng.choice(len(flat), size=self.config.codebook_size,
                              replace=len(flat) < self.config.codebook_size)
            books.append(Codebook.fresh(flat[pick], self.config.decay))
        self.book_lf, self.book_hf = books

    def decode(self, zq_lf, zq_hf) -> Tensor:
        c = self.config
        zq_lf, zq_hf = ag.as_tensor(zq_lf), ag.as_tensor(zq_hf)
        if zq_lf.ndim != 3 or zq_lf.shape[1:] != (c.l_lf, c.dim) \
                or zq_hf.ndim != 3 or zq_hf.shape[1:] != (c.l_hf, c.dim) \
                or zq_lf.shape[0] != zq_hf.shape[0]:
            raise InvalidArgumentError(
                f"latent shapes {zq_lf.shape}, {zq_hf.shape} do not match "
                f"[B, {c.l_lf}, {c.dim}], [B, {c.l_hf}, {c.dim}]")
        B = zq_lf.shape[0]
        y_lf = self.dec_lf(zq_lf.transpose(0, 2, 1)) * self._mask_lf
        y_hf = self.dec_hf(zq_hf.transpose(0, 2, 1)) * self._mask_hf
        planes = (y_lf + y_hf).reshape(B, N_CHANNELS, c.n_bins * 2 * c.n_frames)
        return ag.matmul(planes, self._I).transpose(0, 2, 1)

    def losses(self, x, lam: float | None = None) -> tuple[Tensor, Stage1Losses, dict]:
        """Differentiable stage-1 objective plus its decomposition."""
        self._require_books()
        x = self._check_input(x)
        lam = self.config.lam if lam is None else lam
        z_lf, z_hf = self.encode(x)
        q_lf, q_hf = quantize(z_lf, self.book_lf), quantize(z_hf, self.book_hf)
        xhat = self.decode(q_lf.z_q, q_hf.z_q)
        l_time = ag.mse(xhat, x)
        target_mag = self._magnitudes(np.swapaxes(x, 1, 2)).data
        l_spec = ag.mse(self._magnitudes(xhat.transpose(0, 2, 1)), target_mag)
        recon = l_time + l_spec
        commit = (q_lf.commitment + q_hf.commitment) * COMMITMENT_WEIGHT
        ema_term = q_lf.ema_term + q_hf.ema_term
        codebook = commit + ema_term
        total = recon + codebook * lam if lam else recon
        parts = Stage1Losses(float(total.data), float(recon.data), float(l_time.data),
                             float(l_spec.data), float(codebook.data), lam)
        aux = {"z_lf": z_lf.data, "z_hf": z_hf.data, "tok_lf": q_lf.tokens,
               "tok_hf": q_hf.tokens, "xhat": xhat.data}
        return total, parts, aux

    # -- inference helpers -------------------------------------------------

    def tokenize(self, x) -> tuple[np.ndarray, np.ndarray]:
        self._require_books()
        z_lf, z_hf = self.encode(x)
        return nearest(z_lf.data, self.book_lf.embeddings), nearest(z_hf.data, self.book_hf.embeddings)

    def decode_tokens(self, tok_lf, tok_hf) -> np.ndarray:
        self._require_books()
        tok_lf, tok_hf = np.asarray(tok_lf), np.asarray(tok_hf)
        K = self.config.codebook_size
        for t in (tok_lf, tok_hf):
            if t.size and (t.min() < 0 or t.max() >= K):
                raise InvalidArgumentError(f"token outside 0..{K - 1}")
        zq_lf = self.book_lf.embeddings[tok_lf].astype(np.float32)
        zq_hf = self.book_hf.embeddings[tok_hf].astype(np.float32)
        return self.decode(zq_lf, zq_hf).data

    def reconstruct(self, x, batch: int = 64) -> np.ndarray:
        x = self._check_input(x)
        out = [self.decode_tokens(*self.tokenize(x[i:i + batch])) for i in range(0, len(x), batch)]
        return np.concatenate(out)

    # -- persistence -------------------------------------------------------

    def full_state(self) -> dict[str, np.ndarray]:
        self._require_books()
        state = dict(self.state_dict())
        for band, book in (("lf", self.book_lf), ("hf", self.book_hf)):
            state[f"book_{band}.embeddings"] = book.embeddings.astype(np.float32)
            state[f"book_{band}.ema_counts"] = book.ema_counts.astype(np.float32)
            state[f"book_{band}.ema_sums"] = book.ema_sums.astype(np.float32)
            state[f"book_{band}.unused"] = book.unused.astype(np.float32)
        return state

    def load_full_state(self, state: dict[str, np.ndarray]):
        self.load_state_dict(state)
        books = []
        for band in ("lf", "hf"):
            books.append(Codebook(state[f"book_{band}.embeddings"], state[f"book_{band}.ema_counts"],
                                  state[f"book_{band}.ema_sums"], self.config.decay,
                                  np.asarray(state[f"book_{band}.unused"]).astype(np.int64)))
        self.book_lf, self.book_hf = books


# ----------------------------------------------------------------------------
# training
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Stage1Config:
    steps: int = 2000
    batch: int = 32
    lr: float = 2e-3
    lam: float | None = None
    seed: int = 0


def stage1_step(model: VQVAE, opt: ag.Adam, x: np.ndarray, rng: np.random.Generator,
                lam: float | None = None) -> Stage1Losses:
    opt.zero_grad()
    total, parts, aux = model.losses(x, lam)
    if not np.isfinite(parts.total):
        raise TrainingError("non-finite stage-1 loss")
    ag.backward(total)
    opt.step()
    model.book_lf = ema_update(model.book_lf, aux["tok_lf"], aux["z_lf"], rng)
    model.book_hf = ema_update(model.book_hf, aux["tok_hf"], aux["z_hf"], rng)
    return parts


def stage1_train(values: np.ndarray, config: Stage1Config = Stage1Config(),
                 vq: VQConfig | None = None, model: VQVAE | None = None,
                 ) -> tuple[VQVAE, list[Stage1Losses]]:
    values = np.asarray(values, dtype=np.float32)
    if len(values) == 0:
        raise InvalidArgumentError("stage-1 training needs a non-empty dataset")
    if model is None:
        vq = vq or VQConfig(m=values.shape[1])
        model = VQVAE(vq, seed=config.seed)
    data_rng = stream(config.seed, "data")
    book_rng = stream(config.seed, "codebook")
    if model.book_lf is None:
        model.init_codebooks(values[data_rng.choice(len(values), min(len(values), 256),
                                                    replace=False)], book_rng)
    opt = ag.Adam(model.named_parameters(), lr=config.lr)
    history: list[Stage1Losses] = []
    for step in range(config.steps):
        idx = data_rng.choice(len(values), size=min(config.batch, len(values)), replace=False)
        try:
            parts = stage1_step(model, opt, values[idx], book_rng, config.lam)
        except TrainingError as exc:
            raise TrainingError(f"stage 1 aborted at step {step + 1}: {exc}") from None
        history.append(parts)
        if step % 200 == 0:
            log.info("stage1 step %d total %.5f recon %.5f", step + 1, parts.total,
                     parts.reconstruction)
    return model, history


def rmse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2)))
