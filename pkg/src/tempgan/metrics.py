"""Evaluation metrics for generated temperature maps.

All functions take arrays of shape (N, 24, H, W) (Kelvin unless noted) and
are pure: identical inputs and parameters give identical outputs.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .objectives import temporal_gradients

logger = logging.getLogger(__name__)

LN2 = float(np.log(2.0))
DEFAULT_QQ_LEVELS = np.round(np.arange(1, 100) / 100.0, 2)


def _samples(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 3:
        a = a[None]
    if a.ndim != 4:
        raise ValueError(f"expected samples shaped (N, T, H, W), got {a.shape}")
    return a


# -- spatial correlation ------------------------------------------------------------------

@dataclass
class CorrelationMatrix:
    matrix: np.ndarray  # (P, P); NaN rows/cols where invalid
    valid: np.ndarray  # (P,) bool

    @property
    def invalid_pixels(self) -> list:
        return np.flatnonzero(~self.valid).tolist()


def ppcc_matrix(samples) -> CorrelationMatrix:
    """Pixel-by-pixel Pearson correlation, one observation per hourly frame."""
    a = _samples(samples)
    obs = a.reshape(a.shape[0] * a.shape[1], -1)
    if obs.shape[0] < 2:
        raise ValueError("ppcc_matrix needs at least two frames")
    centered = obs - obs.mean(axis=0)
    std = np.sqrt((centered**2).mean(axis=0))
    valid = std > 0
    if not valid.any():
        warnings.warn("ppcc_matrix: every pixel is constant; correlation fully masked", RuntimeWarning)
    p = obs.shape[1]
    mat = np.full((p, p), np.nan)
    c = centered[:, valid] / std[valid]
    rho = np.clip(c.T @ c / obs.shape[0], -1.0, 1.0)
    np.fill_diagonal(rho, 1.0)
    mat[np.ix_(valid, valid)] = rho
    return CorrelationMatrix(mat, valid)


def spacd(real, gen) -> float:
    """Max column L1 distance between correlation matrices, divided by pixel count."""
    cr, cg = ppcc_matrix(real), ppcc_matrix(gen)
    if cr.valid.shape != cg.valid.shape:
        raise ValueError(f"pixel counts differ: {cr.valid.size} vs {cg.valid.size}")
    if not np.array_equal(cr.valid, cg.valid):
        bad = np.flatnonzero(cr.valid != cg.valid).tolist()
        raise ValueError(f"incompatible pixel masks; pixels valid on one side only: {bad}")
    v = cr.valid
    n = int(v.sum())
    if n == 0:
        raise ValueError("no valid pixels to compare")
    diff = np.abs(cg.matrix[np.ix_(v, v)] - cr.matrix[np.ix_(v, v)])
    return float(diff.sum(axis=0).max() / n)


# -- daily-mean distribution distance -----------------------------------------------------------

def daily_means(samples) -> np.ndarray:
    a = _samples(samples)
    return a.reshape(a.shape[0], -1).mean(axis=1)


def bulk(values, percentiles=(10, 90)) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = np.percentile(v, percentiles)
    return v[(v >= lo) & (v <= hi)]


@dataclass(frozen=True)
class FDTDResult:
    value: float
    mu_real: float
    sigma_real: float
    mu_gen: float
    sigma_gen: float


def fdtd_from_stats(mu_r, sigma_r, mu_g, sigma_g) -> float:
    return float(np.hypot(mu_r - mu_g, sigma_r - sigma_g))


def fdtd(real_daily_means, gen_daily_means, percentiles=(10, 90), min_count: int = 10) -> FDTDResult:
    """Gaussian fit (mean, population std) to each corpus's own percentile bulk,
    then the Euclidean distance between the two (mean, std) pairs."""
    r = np.asarray(real_daily_means, dtype=np.float64).ravel()
    g = np.asarray(gen_daily_means, dtype=np.float64).ravel()
    if r.size < min_count or g.size < min_count:
        raise ValueError(f"fdtd needs at least {min_count} daily means per corpus (got {r.size}, {g.size})")
    br, bg = bulk(r, percentiles), bulk(g, percentiles)
    mr, sr, mg, sg = br.mean(), br.std(), bg.mean(), bg.std()
    return FDTDResult(fdtd_from_stats(mr, sr, mg, sg), float(mr), float(sr), float(mg), float(sg))


# -- temporal gradient distribution distance ------------------------------------------------------

def js_divergence(p, q, atol: float = 1e-9) -> float:
    """Jensen-Shannon divergence in nats of two discrete distributions."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.shape != q.shape:
        raise ValueError(f"support sizes differ: {p.size} vs {q.size}")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("negative probability mass")
    if abs(p.sum() - 1) > atol or abs(q.sum() - 1) > atol:
        raise ValueError(f"distributions must sum to 1 (got {p.sum()}, {q.sum()})")
    m = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log(a[nz] / m[nz])))

    return 0.5 * kl(p) + 0.5 * kl(q)


@dataclass(frozen=True)
class TGDDResult:
    value: float
    edges: np.ndarray
    real_mass: np.ndarray
    gen_mass: np.ndarray
    requested_bins: int

    @property
    def effective_bins(self) -> int:
        return len(self.real_mass)


def tgdd_values(real_grads, gen_grads, n_bins: int = 10, min_per_bin: int = 10) -> TGDDResult:
    """Bin-averaged two-point JS divergence on pooled-quantile bins.

    Bin edges are the ``n_bins``-quantiles of the real and generated values
    pooled together; each bin contributes JS((p_i, 1-p_i) || (q_i, 1-q_i))
    where p_i, q_i are the real and generated fractions falling in it.
    """
    r = np.asarray(real_grads, dtype=np.float64).ravel()
    g = np.asarray(gen_grads, dtype=np.float64).ravel()
    need = n_bins * min_per_bin
    if r.size < need or g.size < need:
        raise ValueError(f"tgdd needs at least {need} values per corpus (got {r.size}, {g.size})")
    pooled = np.concatenate([r, g])
    edges = np.unique(np.quantile(pooled, np.linspace(0.0, 1.0, n_bins + 1)))
    if edges.size < 2:
        edges = np.array([pooled.min(), pooled.max()])
    if edges.size - 1 < n_bins:
        logger.info("tgdd: tied quantiles merged %d bins into %d", n_bins, edges.size - 1)
    inner = edges[1:-1]
    nb = max(edges.size - 1, 1)
    p = np.bincount(np.searchsorted(inner, r, side="right"), minlength=nb) / r.size
    q = np.bincount(np.searchsorted(inner, g, side="right"), minlength=nb) / g.size
    terms = [js_divergence([pi, 1 - pi], [qi, 1 - qi], atol=1e-6) for pi, qi in zip(p, q)]
    return TGDDResult(float(np.mean(terms)), edges, p, q, n_bins)


def tgdd(real_samples, gen_samples, n_bins: int = 10) -> TGDDResult:
    return tgdd_values(temporal_gradients(_samples(real_samples)),
                       temporal_gradients(_samples(gen_samples)), n_bins)


# -- quantile envelopes and ECDF ------------------------------------------------------------

@dataclass
class QQEnvelope:
    levels: np.ndarray
    ground_truth: np.ndarray
    low: np.ndarray
    high: np.ndarray
    n_realizations: int

    @property
    def contains_identity(self) -> np.ndarray:
        return (self.low <= self.ground_truth) & (self.ground_truth <= self.high)

    @property
    def offset(self) -> np.ndarray:
        """Envelope midpoint minus ground-truth quantile, per level."""
        return 0.5 * (self.low + self.high) - self.ground_truth

    def rows(self) -> list:
        return [(float(l), float(t), float(lo), float(hi))
                for l, t, lo, hi in zip(self.levels, self.ground_truth, self.low, self.high)]


def qq_envelope(real_values, sampler, n_realizations: int = 100, levels=None) -> QQEnvelope:
    """Per-level min/max of ``n_realizations`` sampled quantiles.

    ``sampler(seed)`` returns one realization's values, same count as real.
    """
    real = np.asarray(real_values, dtype=np.float64).ravel()
    if real.size == 0:
        raise ValueError("qq_envelope: empty ground truth")
    if n_realizations < 1:
        raise ValueError("qq_envelope: need at least one realization")
    levels = DEFAULT_QQ_LEVELS if levels is None else np.asarray(levels, dtype=np.float64)
    if np.any(np.diff(levels) <= 0) or levels[0] <= 0 or levels[-1] >= 1:
        raise ValueError("quantile levels must be strictly increasing inside (0, 1)")
    gt = np.quantile(real, levels)
    qs = np.empty((n_realizations, levels.size))
    for i in range(n_realizations):
        vals = np.asarray(sampler(i), dtype=np.float64).ravel()
        if vals.size == 0:
            raise ValueError(f"qq_envelope: realization {i} is empty")
        if vals.size != real.size:
            raise ValueError(f"qq_envelope: realization {i} has {vals.size} values, ground truth {real.size}")
        qs[i] = np.quantile(vals, levels)
    return QQEnvelope(levels, gt, qs.min(axis=0), qs.max(axis=0), n_realizations)


def ecdf(values) -> tuple:
    """Sorted values and right-continuous cumulative probabilities."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ValueError("ecdf of an empty set")
    return v, np.searchsorted(v, v, side="right") / v.size


def daily_extrema(samples) -> np.ndarray:
    """(N, 2) array of (Tmax, Tmin) of each sample's spatial-mean hourly series."""
    a = _samples(samples)
    series = a.reshape(a.shape[0], a.shape[1], -1).mean(axis=2)
    return np.stack([series.max(axis=1), series.min(axis=1)], axis=1)


# -- reports ----------------------------------------------------------------------------------

def _plain(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


@dataclass
class MetricReport:
    metric: str
    value: object
    params: dict = field(default_factory=dict)
    label: dict | None = None
    n_real: int = 0
    n_gen: int = 0
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))

    def __post_init__(self):
        vals = np.asarray(_plain(self.value), dtype=np.float64)
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"{self.metric}: report values must be finite")

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "value": _plain(self.value),
            "params": _plain(self.params),
            "label": self.label,
            "n_real": self.n_real,
            "n_gen": self.n_gen,
            "artifact_version": __version__,
            "timestamp": self.timestamp,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_qq_csv(env: QQEnvelope, path) -> None:
    write_csv(path, ("level", "gt_q", "lo", "hi"), env.rows())


def write_ecdf_csv(values, path) -> None:
    x, p = ecdf(values)
    write_csv(path, ("value", "probability"), zip(x.tolist(), p.tolist()))


def write_histogram_csv(result: TGDDResult, path) -> None:
    rows = [(float(lo), float(hi), float(p), float(q))
            for lo, hi, p, q in zip(result.edges[:-1], result.edges[1:], result.real_mass, result.gen_mass)]
    write_csv(path, ("edge_lo", "edge_hi", "real_mass", "gen_mass"), rows)
