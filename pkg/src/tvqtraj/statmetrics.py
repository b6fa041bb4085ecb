"""Quality and statistical metrics for comparing real and synthetic trajectory sets.

All set-level functions take arrays ``[n, m, C]`` in normalised units.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from .errors import InvalidArgumentError
from .rocket import make_kernels, rocket_features
from .trajdata import CHANNELS, NormStats, kmeans

log = logging.getLogger(__name__)

PSD_TOL = 1e-6
MDD_GRID = 100
ACD_MAX_LAG = 50
IS_SPLITS = 10
DEFAULT_KERNELS = 500


def _sets(real, gen) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(real, dtype=np.float64), np.asarray(gen, dtype=np.float64)
    if a.ndim != 3 or b.ndim != 3 or a.shape[1:] != b.shape[1:]:
        raise InvalidArgumentError(f"set shapes differ: {a.shape} vs {b.shape}")
    if len(a) == 0 or len(b) == 0:
        raise InvalidArgumentError("both sets must be non-empty")
    return a, b


def _channel_name(c: int) -> str:
    return CHANNELS[c] if c < len(CHANNELS) else f"channel {c}"


# ----------------------------------------------------------------------------
# FID
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureStats:
    mu: np.ndarray
    sigma: np.ndarray

    @classmethod
    def of(cls, features: np.ndarray) -> "FeatureStats":
        f = np.asarray(features, dtype=np.float64)
        if f.ndim != 2 or len(f) < 2:
            raise InvalidArgumentError(f"need >= 2 feature rows, got shape {f.shape}")
        return cls(f.mean(axis=0), np.atleast_2d(np.cov(f, rowvar=False)))


def _psd_sqrt(sigma: np.ndarray, what: str) -> np.ndarray:
    sym = 0.5 * (sigma + sigma.T)
    w, v = np.linalg.eigh(sym)
    tol = PSD_TOL * max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.min(initial=0.0) < -tol:
        raise InvalidArgumentError(f"{what} is not positive semi-definite (eigenvalue {w.min():.3g})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def fid_from_stats(real: FeatureStats, gen: FeatureStats) -> float:
    if real.mu.shape != gen.mu.shape:
        raise InvalidArgumentError(f"feature dims differ: {real.mu.shape} vs {gen.mu.shape}")
    ra = _psd_sqrt(real.sigma, "real covariance")
    rb = _psd_sqrt(gen.sigma, "generated covariance")
    # eigenvalues of sqrt(S_r) S_g sqrt(S_r) must be non-negative
    prod = ra @ gen.sigma @ ra
    w = np.linalg.eigvalsh(0.5 * (prod + prod.T))
    if w.min(initial=0.0) < -PSD_TOL * max(1.0, float(np.abs(w).max(initial=0.0))):
        raise InvalidArgumentError(f"covariance product not PSD (eigenvalue {w.min():.3g})")
    # Tr sqrt(S_r S_g) = sum of singular values of sqrt(S_r) sqrt(S_g)
    tr_sqrt = float(np.linalg.svd(ra @ rb, compute_uv=False).sum())
    diff = real.mu - gen.mu
    value = float(diff @ diff + np.trace(real.sigma) + np.trace(gen.sigma) - 2.0 * tr_sqrt)
    if value < -PSD_TOL * max(1.0, float(np.trace(real.sigma) + np.trace(gen.sigma))):
        raise InvalidArgumentError(f"FID evaluated to {value:.3g} < 0 beyond tolerance")
    return max(value, 0.0)


def fid(real_features: np.ndarray, gen_features: np.ndarray) -> float:
    a, b = np.asarray(real_features, np.float64), np.asarray(gen_features, np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise InvalidArgumentError(f"feature shapes differ: {a.shape} vs {b.shape}")
    return fid_from_stats(FeatureStats.of(a), FeatureStats.of(b))


# ----------------------------------------------------------------------------
# inception score
# ----------------------------------------------------------------------------

def inception_score(probs: np.ndarray, splits: int = IS_SPLITS) -> tuple[float, float]:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise InvalidArgumentError(f"expected [n, C] probabilities, got {p.shape}")
    if len(p) < splits:
        raise InvalidArgumentError(f"need >= {splits} samples, got {len(p)}")
    rows = p.sum(axis=1)
    if np.any(np.abs(rows - 1.0) > 1e-6) or np.any(p < 0):
        bad = int(np.argmax(np.abs(rows - 1.0)))
        raise InvalidArgumentError(f"row {bad} is not a probability distribution (sums to {rows[bad]})")
    scores = []
    for part in np.array_split(p, splits):
        marginal = part.mean(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(part > 0, part * (np.log(part) - np.log(marginal)), 0.0)
        scores.append(np.exp(terms.sum(axis=1).mean()))
    return float(np.mean(scores)), float(np.std(scores))


# ----------------------------------------------------------------------------
# marginal densities
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class KdeEstimate:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float


def silverman_bandwidth(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    std = float(np.std(x, ddof=1)) if n > 1 else 0.0
    return (3.0 * n / 4.0) ** (-0.2) * std


def kde(samples: np.ndarray, grid: np.ndarray, bandwidth: float | None = None,
        chunk: int = 8192) -> KdeEstimate:
    x = np.asarray(samples, dtype=np.float64).ravel()
    g = np.asarray(grid, dtype=np.float64)
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise InvalidArgumentError("bandwidth must be positive")
    dens = np.zeros_like(g)
    for i in range(0, len(x), chunk):
        u = (g[:, None] - x[None, i:i + chunk]) / h
        dens += np.exp(-0.5 * u * u).sum(axis=1)
    dens /= len(x) * h * np.sqrt(2.0 * np.pi)
    return KdeEstimate(g, dens, h)


def _floor_bandwidth(x: np.ndarray, span: float) -> float:
    h = silverman_bandwidth(x)
    return h if h > 0 else 1e-3 * max(span, 1.0)


def mdd(real, gen, n_grid: int = MDD_GRID) -> float:
    a, b = _sets(real, gen)
    out = []
    for c in range(a.shape[2]):
        xa, xb = a[..., c].ravel(), b[..., c].ravel()
        lo, hi = min(xa.min(), xb.min()), max(xa.max(), xb.max())
        if hi == lo:
            out.append(0.0)
            continue
        grid = np.linspace(lo, hi, n_grid)
        fa = kde(xa, grid, _floor_bandwidth(xa, hi - lo)).density
        fb = kde(xb, grid, _floor_bandwidth(xb, hi - lo)).density
        out.append(float(np.mean(np.abs(fa - fb))))
    return float(np.mean(out))


# ----------------------------------------------------------------------------
# autocorrelation
# ----------------------------------------------------------------------------

def default_max_lag(m: int) -> int:
    return min(ACD_MAX_LAG, m - 2)


def autocorrelation(series: np.ndarray, max_lag: int) -> tuple[np.ndarray, np.ndarray]:
    """Pearson autocorrelation of each row at lags 1..max_lag.

    Returns ``(rho [n, max_lag], valid [n])``; rows where any lagged pair has
    zero variance are marked invalid.
    """
    x = np.asarray(series, dtype=np.float64)
    n, m = x.shape
    if m <= max_lag + 1:
        raise InvalidArgumentError(f"series length {m} must exceed max lag + 1 = {max_lag + 1}")
    rho = np.zeros((n, max_lag))
    valid = np.ones(n, dtype=bool)
    for k in range(1, max_lag + 1):
        u, v = x[:, :-k], x[:, k:]
        u = u - u.mean(axis=1, keepdims=True)
        v = v - v.mean(axis=1, keepdims=True)
        den = np.sqrt((u * u).sum(axis=1) * (v * v).sum(axis=1))
        ok = den > 0
        valid &= ok
        rho[:, k - 1] = np.where(ok, (u * v).sum(axis=1) / np.where(ok, den, 1.0), 0.0)
    return np.clip(rho, -1.0, 1.0), valid


def mean_autocorrelation(values: np.ndarray, max_lag: int, label: str = "set") -> np.ndarray:
    """Per channel mean over trajectories, ``[C, max_lag]``."""
    C = values.shape[2]
    out = np.zeros((C, max_lag))
    for c in range(C):
        rho, valid = autocorrelation(values[..., c], max_lag)
        if not valid.all():
            log.warning("%s: %d trajectories with zero-variance %s excluded from ACD",
                        label, int((~valid).sum()), _channel_name(c))
        if not valid.any():
            raise InvalidArgumentError(f"{label}: every trajectory has constant {_channel_name(c)}")
        out[c] = rho[valid].mean(axis=0)
    return out


def acd(real, gen, max_lag: int | None = None) -> float:
    a, b = _sets(real, gen)
    k = default_max_lag(a.shape[1]) if max_lag is None else max_lag
    ra = mean_autocorrelation(a, k, "real")
    rb = mean_autocorrelation(b, k, "generated")
    return float(np.mean(np.abs(ra - rb)))


# ----------------------------------------------------------------------------
# moments
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentStats:
    skewness: np.ndarray
    kurtosis: np.ndarray


def moments(values: np.ndarray) -> MomentStats:
    x = np.asarray(values, dtype=np.float64)
    x = x.reshape(-1, x.shape[-1]) if x.ndim > 1 else x[:, None]
    mu = x.mean(axis=0)
    d = x - mu
    var = (d * d).mean(axis=0)
    for c in np.flatnonzero(np.ptp(x, axis=0) == 0):
        raise InvalidArgumentError(f"{_channel_name(int(c))} is constant; moments undefined")
    sd = np.sqrt(var)
    return MomentStats((d ** 3).mean(axis=0) / sd ** 3, (d ** 4).mean(axis=0) / var ** 2)


def skew_diff(real, gen) -> float:
    a, b = _sets(real, gen)
    return float(np.mean(np.abs(moments(a).skewness - moments(b).skewness)))


def kurt_diff(real, gen) -> float:
    a, b = _sets(real, gen)
    return float(np.mean(np.abs(moments(a).kurtosis - moments(b).kurtosis)))


# ----------------------------------------------------------------------------
# visual-inspection exports
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class PcaResult:
    real: np.ndarray           # [n_real, 2]
    gen: np.ndarray            # [n_gen, 2]
    explained: np.ndarray      # ratios, descending
    components: np.ndarray     # [k, m*C] orthonormal rows
    mean: np.ndarray


def pca_project(real, gen) -> PcaResult:
    a, b = _sets(real, gen)
    if len(a) + len(b) < 3 or len(a) < 2:
        raise InvalidArgumentError("PCA needs >= 3 samples in total and >= 2 real samples")
    Xa, Xb = a.reshape(len(a), -1), b.reshape(len(b), -1)
    mean = Xa.mean(axis=0)
    _, s, vt = np.linalg.svd(Xa - mean, full_matrices=False)
    var = s ** 2
    explained = var / var.sum() if var.sum() > 0 else np.zeros_like(var)
    comps = vt[:2]
    return PcaResult((Xa - mean) @ comps.T, (Xb - mean) @ comps.T, explained, vt, mean)


def correlation_matrix(values: np.ndarray) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    flat = x.reshape(-1, x.shape[-1])
    sd = flat.std(axis=0)
    for c in np.flatnonzero(sd <= 0):
        raise InvalidArgumentError(f"{_channel_name(int(c))} is constant; correlation undefined")
    r = np.corrcoef(flat, rowvar=False)
    r = 0.5 * (r + r.T)
    np.fill_diagonal(r, 1.0)
    return r


def correlation_report(real, gen) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a, b = _sets(real, gen)
    ra, rb = correlation_matrix(a), correlation_matrix(b)
    return ra, rb, np.abs(ra - rb)


@dataclass(frozen=True)
class DurationStats:
    durations: np.ndarray
    counts: np.ndarray
    edges: np.ndarray
    minimum: float
    median: float
    maximum: float


def durations_from(values: np.ndarray, norm: NormStats) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    return x[:, -1, 3] * norm.scale[3] + norm.minimum[3]


def duration_distribution(values: np.ndarray, norm: NormStats, bins: int = 20) -> DurationStats:
    d = durations_from(values, norm)
    counts, edges = np.histogram(d, bins=bins)
    return DurationStats(d, counts, edges, float(d.min()), float(np.median(d)), float(d.max()))


def timeseries_bands(values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-step ``(mean, lower, upper)`` with lower/upper the 2.5th/97.5th percentiles."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 3 or len(x) < 2:
        raise InvalidArgumentError(f"need >= 2 trajectories [n, m, C], got {x.shape}")
    mean = x.mean(axis=0)
    lo, hi = np.percentile(x, [2.5, 97.5], axis=0)
    # float rounding can put the mean a hair outside the percentile band
    return mean, np.minimum(lo, mean), np.maximum(hi, mean)


# ----------------------------------------------------------------------------
# feature sources and the full report
# ----------------------------------------------------------------------------

class RocketClassifier:
    """Multinomial logistic regression on standardised ROCKET features."""

    def __init__(self, kernels, n_classes: int, l2: float = 1e-2):
        self.kernels = kernels
        self.n_classes = n_classes
        self.l2 = l2
        self.mu = self.sd = self.W = None

    def fit(self, values: np.ndarray, labels: np.ndarray,
            features: np.ndarray | None = None) -> "RocketClassifier":
        f = rocket_features(values, self.kernels) if features is None else features
        self.mu = f.mean(axis=0)
        self.sd = np.where(f.std(axis=0) > 1e-12, f.std(axis=0), 1.0)
        z = np.column_stack([(f - self.mu) / self.sd, np.ones(len(f))])
        C = self.n_classes
        onehot = np.eye(C)[labels]

        def objective(w):
            W = w.reshape(z.shape[1], C)
            s = z @ W
            s -= s.max(axis=1, keepdims=True)
            p = np.exp(s)
            p /= p.sum(axis=1, keepdims=True)
            nll = -np.sum(onehot * np.log(np.clip(p, 1e-300, None))) / len(z)
            grad = z.T @ (p - onehot) / len(z) + self.l2 * W
            return nll + 0.5 * self.l2 * np.sum(W * W), grad.ravel()

        res = optimize.minimize(objective, np.zeros(z.shape[1] * C), jac=True, method="L-BFGS-B",
                                options={"maxiter": 200})
        self.W = res.x.reshape(z.shape[1], C)
        return self

    def predict_proba(self, values: np.ndarray, features: np.ndarray | None = None) -> np.ndarray:
        f = rocket_features(values, self.kernels) if features is None else features
        z = np.column_stack([(f - self.mu) / self.sd, np.ones(len(f))])
        s = z @ self.W
        s -= s.max(axis=1, keepdims=True)
        p = np.exp(s)
        return p / p.sum(axis=1, keepdims=True)


@dataclass
class EvaluationReport:
    fid: float
    is_mean: float
    is_std: float
    mdd: float
    acd: float
    sd: float
    kd: float
    feature_source: str
    n_real: int
    n_gen: int
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(real, gen, fcn=None, real_labels: np.ndarray | None = None,
             n_kernels: int = DEFAULT_KERNELS, seed: int = 0) -> EvaluationReport:
    """All six headline metrics for one real-vs-synthetic comparison.

    Features for FID come from ``fcn`` when given, otherwise from ROCKET.
    Class probabilities for IS come from ``fcn`` or, without one, from a
    logistic model on ROCKET features fitted to ``real_labels`` (k-means
    labels of the real set when those are missing too).
    """
    a, b = _sets(real, gen)
    if fcn is not None:
        source = "fcn"
        fa, fb = fcn.features(a), fcn.features(b)
        probs = fcn.predict_proba(b)
    else:
        source = f"rocket-{n_kernels}"
        kernels = make_kernels(n_kernels, a.shape[2], a.shape[1], seed)
        fa, fb = rocket_features(a, kernels), rocket_features(b, kernels)
        if real_labels is None:
            C = min(5, len(a))
            real_labels = kmeans(a[..., :2].reshape(len(a), -1), C, seed).labels
        labels = np.asarray(real_labels, dtype=np.int64)
        C = int(labels.max()) + 1
        if C < 2:
            probs = np.ones((len(b), 1))
        else:
            clf = RocketClassifier(kernels, C).fit(a, labels, features=fa)
            probs = clf.predict_proba(b, features=fb)
    is_mean, is_std = inception_score(probs, min(IS_SPLITS, len(b)))
    return EvaluationReport(
        fid=fid(fa, fb), is_mean=is_mean, is_std=is_std, mdd=mdd(a, b), acd=acd(a, b),
        sd=skew_diff(a, b), kd=kurt_diff(a, b), feature_source=source,
        n_real=len(a), n_gen=len(b))
