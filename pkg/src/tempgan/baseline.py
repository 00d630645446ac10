"""Per-hour Gaussian baseline generator.

Every pixel at hour t is drawn independently from N(mu[t], sigma[t]), with
mu and sigma the empirical spatial mean and (population) std of that hour
pooled over all samples of a bucket.  The baseline has no spatial
covariance by construction, which is what makes it a reference for the
spatial-correlation metric.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .grid_store import HOURS_PER_DAY, REGION_CELLS, ConditionLabel, SampleBucket


class HourlyGaussianBaseline(BaseEstimator):
    def fit(self, X, y=None, label: ConditionLabel | None = None):
        if isinstance(X, SampleBucket):
            label = X.label if label is None else label
            X = X.samples
        a = np.asarray(X, dtype=np.float64)
        if a.ndim != 4 or a.shape[1] != HOURS_PER_DAY:
            raise ValueError(f"expected samples shaped (N, 24, H, W), got {a.shape}")
        if a.shape[0] == 0:
            raise ValueError("cannot fit a baseline to an empty bucket")
        per_hour = a.transpose(1, 0, 2, 3).reshape(HOURS_PER_DAY, -1)
        self.mu_ = per_hour.mean(axis=1)
        self.sigma_ = per_hour.std(axis=1)
        self.frame_shape_ = a.shape[2:]
        self.label_ = label
        return self

    def sample(self, n: int, seed: int = 0) -> np.ndarray:
        check_is_fitted(self, "mu_")
        rng = np.random.default_rng(seed)
        shape = (n, HOURS_PER_DAY) + tuple(self.frame_shape_)
        z = rng.standard_normal(shape)
        return self.mu_[None, :, None, None] + self.sigma_[None, :, None, None] * z

    def to_dict(self) -> dict:
        check_is_fitted(self, "mu_")
        return {
            "label": self.label_.as_dict() if self.label_ is not None else None,
            "mu": self.mu_.tolist(),
            "sigma": self.sigma_.tolist(),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "HourlyGaussianBaseline":
        d = json.loads(Path(path).read_text())
        mu = np.asarray(d["mu"], dtype=np.float64)
        sigma = np.asarray(d["sigma"], dtype=np.float64)
        if mu.shape != (HOURS_PER_DAY,) or sigma.shape != (HOURS_PER_DAY,):
            raise ValueError(f"{path}: expected 24 means and 24 stds")
        if np.any(sigma < 0) or not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise ValueError(f"{path}: sigma must be finite and non-negative")
        obj = cls()
        obj.mu_, obj.sigma_ = mu, sigma
        obj.frame_shape_ = (REGION_CELLS, REGION_CELLS)
        obj.label_ = ConditionLabel(**d["label"]) if d.get("label") else None
        return obj


def fit_baseline(bucket: SampleBucket) -> HourlyGaussianBaseline:
    return HourlyGaussianBaseline().fit(bucket)


def sample_baseline(model: HourlyGaussianBaseline, n: int, seed: int = 0) -> np.ndarray:
    return model.sample(n, seed)
