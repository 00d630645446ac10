import numpy as np
import pytest

from tempgan.baseline import HourlyGaussianBaseline, fit_baseline, sample_baseline
from tempgan.grid_store import ConditionLabel, SampleBucket
from tempgan.metrics import daily_means, fdtd, ppcc_matrix

LAB = ConditionLabel(4, 1, 1, 0)


def test_constant_sample():
    m = fit_baseline(SampleBucket(LAB, np.full((1, 24, 8, 8), 280.0)))
    assert np.all(m.mu_ == 280) and np.all(m.sigma_ == 0)
    out = m.sample(3, seed=1)
    assert np.all(out == 280)


def test_two_sample_hour_zero():
    x = np.full((2, 24, 8, 8), 285.0)
    x[0, 0], x[1, 0] = 279.0, 281.0
    m = HourlyGaussianBaseline().fit(x)
    assert m.mu_[0] == 280.0 and m.sigma_[0] == 1.0


def test_law_of_large_numbers():
    rng = np.random.default_rng(0)
    x = rng.normal(290, 3, (157, 24, 8, 8))  # ~10,000 values per hour
    m = HourlyGaussianBaseline().fit(x)
    assert np.all(np.abs(m.mu_ - 290) < 0.1) and np.all(np.abs(m.sigma_ - 3) < 0.1)


def test_refit_recovers_parameters():
    rng = np.random.default_rng(1)
    mu = 280 + 5 * np.sin(np.arange(24) / 4)
    sig = 1 + np.arange(24) / 12
    x = mu[None, :, None, None] + sig[None, :, None, None] * rng.standard_normal((10, 24, 8, 8))
    m = HourlyGaussianBaseline().fit(x)
    re = HourlyGaussianBaseline().fit(sample_baseline(m, 1000, seed=2))
    np.testing.assert_allclose(re.mu_, m.mu_, rtol=0.02)
    np.testing.assert_allclose(re.sigma_, m.sigma_, rtol=0.02)


def test_sampling_deterministic():
    m = HourlyGaussianBaseline().fit(np.random.default_rng(0).normal(280, 2, (5, 24, 8, 8)))
    assert np.array_equal(m.sample(4, 9), m.sample(4, 9))
    assert not np.array_equal(m.sample(4, 9), m.sample(4, 10))


def test_empty_bucket_rejected():
    with pytest.raises(ValueError, match="empty"):
        HourlyGaussianBaseline().fit(np.zeros((0, 24, 8, 8)))


def test_no_spatial_correlation():
    m = HourlyGaussianBaseline().fit(np.random.default_rng(0).normal(280, 2, (5, 24, 8, 8)))
    rho = ppcc_matrix(m.sample(1000, 3)).matrix
    off = rho[~np.eye(64, dtype=bool)]
    assert -0.05 < off.mean() < 0.05


def test_fdtd_to_source_shrinks_with_n():
    rng = np.random.default_rng(4)
    src = rng.normal(285, 2, (2000, 24, 8, 8)).astype(np.float32)
    m = HourlyGaussianBaseline().fit(src)
    real = daily_means(src)
    small = fdtd(real, daily_means(m.sample(50, 1))).value
    large = fdtd(real, daily_means(m.sample(2000, 1))).value
    assert large < small


def test_json_round_trip(tmp_path):
    m = fit_baseline(SampleBucket(LAB, np.random.default_rng(0).normal(280, 2, (3, 24, 8, 8))))
    m.save(tmp_path / "b.json")
    back = HourlyGaussianBaseline.load(tmp_path / "b.json")
    assert back.label_ == LAB
    assert np.array_equal(back.mu_, m.mu_) and np.array_equal(back.sigma_, m.sigma_)
    assert len(m.to_dict()["mu"]) + len(m.to_dict()["sigma"]) == 48
