import json
import math

import numpy as np
import pytest
from conftest import corpus_with_bulk
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tempgan.metrics import (
    LN2,
    MetricReport,
    bulk,
    daily_extrema,
    daily_means,
    ecdf,
    fdtd,
    fdtd_from_stats,
    js_divergence,
    ppcc_matrix,
    qq_envelope,
    spacd,
    tgdd,
    tgdd_values,
    write_qq_csv,
)

PROPS = settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])


def random_corpus(seed, n=None, shape=(24, 8, 8)):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(2, 12))
    base = rng.normal(285, 5)
    spatial = rng.normal(0, rng.uniform(0, 3), shape[1:])
    return base + spatial + rng.normal(0, rng.uniform(0.1, 2), (n,) + shape)


# -- PPCC / SPAC'D ---------------------------------------------------------------

def test_ppcc_perfect_linear_pair():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 24, 1, 2))
    x[..., 1] = 2 * x[..., 0] + 5
    m = ppcc_matrix(x).matrix
    assert m[0, 1] == pytest.approx(1.0) and np.all(np.diag(m) == 1)


def test_ppcc_iid_noise_near_zero():
    m = ppcc_matrix(np.random.default_rng(1).normal(size=(10_000, 1, 8, 8))).matrix
    assert np.abs(m[~np.eye(64, dtype=bool)]).max() < 0.05


def test_ppcc_masks_constant_pixels():
    x = np.random.default_rng(2).normal(size=(3, 24, 8, 8))
    x[:, :, 0, 0] = 280.0
    c = ppcc_matrix(x)
    assert c.invalid_pixels == [0] and np.isnan(c.matrix[0]).all()
    with pytest.warns(RuntimeWarning, match="constant"):
        ppcc_matrix(np.full((2, 24, 8, 8), 280.0))


def test_spacd_two_pixel_hand_value():
    t = np.linspace(-1, 1, 24)
    pos = np.stack([t, t], axis=-1).reshape(1, 24, 1, 2)
    neg = np.stack([t, -t], axis=-1).reshape(1, 24, 1, 2)
    assert spacd(pos, neg) == pytest.approx(1.0)


def test_spacd_incompatible_masks():
    a = np.random.default_rng(0).normal(size=(2, 24, 8, 8))
    b = a.copy()
    b[:, :, 1, 1] = 3.0
    with pytest.raises(ValueError, match=r"\[9\]"):
        spacd(a, b)


@PROPS
@given(st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
def test_spacd_bounds_symmetry_identity(s1, s2):
    a, b = random_corpus(s1), random_corpus(s2)
    v = spacd(a, b)
    assert 0.0 <= v <= 2.0
    assert v == pytest.approx(spacd(b, a), abs=1e-12)
    assert spacd(a, a) == 0.0


# -- FDTD -------------------------------------------------------------------------

@pytest.mark.parametrize("mu_r,sigma_r,mu_g,sigma_g,expected", [
    (283.3407, 2.0201, 282.5232, 2.0373, 0.8177),
    (284.0418, 1.9294, 283.7031, 1.9711, 0.3412),
])
def test_fdtd_table_rows(mu_r, sigma_r, mu_g, sigma_g, expected):
    real, gen = corpus_with_bulk(mu_r, sigma_r, seed=1), corpus_with_bulk(mu_g, sigma_g, seed=2)
    res = fdtd(real, gen)
    assert (res.mu_real, res.sigma_real) == pytest.approx((mu_r, sigma_r), abs=1e-9)
    assert (res.mu_gen, res.sigma_gen) == pytest.approx((mu_g, sigma_g), abs=1e-9)
    assert abs(res.value - expected) < 1e-3
    assert fdtd_from_stats(mu_r, sigma_r, mu_g, sigma_g) == pytest.approx(res.value, abs=1e-9)


def test_fdtd_too_few():
    with pytest.raises(ValueError, match="at least 10"):
        fdtd(np.arange(9.0), np.arange(20.0))


def test_bulk_keeps_inner_band():
    v = np.arange(101.0)
    assert bulk(v).tolist() == list(np.arange(10.0, 91.0))


@PROPS
@given(st.integers(0, 2**32 - 1), st.floats(-20, 20))
def test_fdtd_properties(seed, delta):
    rng = np.random.default_rng(seed)
    a = rng.normal(285, rng.uniform(0.5, 4), int(rng.integers(10, 300)))
    b = rng.normal(285, rng.uniform(0.5, 4), int(rng.integers(10, 300)))
    assert fdtd(a, a).value == 0.0
    assert fdtd(a, b).value >= 0
    shifted = fdtd(a, b + delta)
    assert shifted.mu_gen == pytest.approx(fdtd(a, b).mu_gen + delta, abs=1e-9)


# -- JS and TGDD ----------------------------------------------------------------------

def test_js_cases():
    assert js_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert abs(js_divergence([1, 0], [0, 1]) - math.log(2)) < 1e-12
    p, q = (0.5, 0.5), (0.25, 0.75)
    m = [(a + b) / 2 for a, b in zip(p, q)]
    by_hand = 0.5 * sum(a * math.log(a / c) for a, c in zip(p, m)) + 0.5 * sum(b * math.log(b / c) for b, c in zip(q, m))
    assert js_divergence(p, q) == pytest.approx(by_hand, abs=1e-15)
    assert js_divergence(q, p) == pytest.approx(by_hand, abs=1e-15)


@pytest.mark.parametrize("p,q", [([0.5, 0.6], [0.5, 0.5]), ([-0.1, 1.1], [0.5, 0.5]), ([1.0], [0.5, 0.5])])
def test_js_rejects_bad_input(p, q):
    with pytest.raises(ValueError):
        js_divergence(p, q)


def _simplex(n):
    return arrays(np.float64, n, elements=st.floats(0, 1)).filter(lambda a: a.sum() > 1e-6).map(lambda a: a / a.sum())


@PROPS
@given(st.integers(1, 12).flatmap(lambda n: st.tuples(_simplex(n), _simplex(n))))
def test_js_properties(pq):
    p, q = pq
    v = js_divergence(p, q)
    assert -1e-15 <= v <= LN2 + 1e-12
    assert v == pytest.approx(js_divergence(q, p), abs=1e-12)
    assert js_divergence(p, p) == pytest.approx(0.0, abs=1e-15)


def test_tgdd_identical_is_zero():
    x = random_corpus(0, n=4)
    assert tgdd(x, x).value < 1e-12


def test_tgdd_disjoint_two_bins():
    res = tgdd_values(-np.ones(100), np.ones(100), n_bins=2)
    assert abs(res.value - LN2) < 1e-9


def test_tgdd_same_distribution_large_sample():
    rng = np.random.default_rng(5)
    assert tgdd_values(rng.standard_normal(100_000), rng.standard_normal(100_000)).value < 0.005


def test_tgdd_tied_edges_merge():
    res = tgdd_values(np.zeros(200), np.r_[np.zeros(150), np.ones(50)], n_bins=10)
    assert res.effective_bins < 10


@PROPS
@given(st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
def test_tgdd_bounds(s1, s2):
    a, b = random_corpus(s1), random_corpus(s2)
    v = tgdd(a, b).value
    assert 0.0 <= v <= LN2
    assert tgdd(a, a).value < 1e-12


# -- Q-Q, ECDF, extrema ---------------------------------------------------------------------

def test_qq_copy_collapses():
    real = np.random.default_rng(0).normal(280, 3, 500)
    env = qq_envelope(real, lambda i: real, 5)
    assert np.array_equal(env.low, env.ground_truth) and np.array_equal(env.high, env.ground_truth)
    assert env.levels.size == 99


def test_qq_shift_equivariance(tmp_path):
    real = np.random.default_rng(0).normal(280, 3, 500)
    env = qq_envelope(real, lambda i: real + 1.0, 3)
    np.testing.assert_allclose(env.offset, 1.0, atol=1e-9)
    assert np.all(env.low <= env.high)
    write_qq_csv(env, tmp_path / "qq.csv")
    lines = (tmp_path / "qq.csv").read_text().strip().splitlines()
    assert len(lines) == 100 and all(len(l.split(",")) == 4 for l in lines)


def test_qq_rejects_bad_inputs():
    with pytest.raises(ValueError):
        qq_envelope([], lambda i: [], 3)
    with pytest.raises(ValueError):
        qq_envelope([1.0, 2.0], lambda i: [1.0], 3)


def test_ecdf_cases():
    assert [list(a) for a in ecdf([1])] == [[1.0], [1.0]]
    x, p = ecdf([4, 2, 1, 2])
    assert x.tolist() == [1, 2, 2, 4] and p.tolist() == [0.25, 0.75, 0.75, 1.0]
    v = np.random.default_rng(0).standard_normal(100_000)
    x, p = ecdf(v)
    assert abs(p[np.searchsorted(x, 0.0) - 1] - 0.5) < 0.01


def test_daily_extrema_cases():
    assert daily_extrema(np.full((1, 24, 8, 8), 280.0)).tolist() == [[280.0, 280.0]]
    series = 290 + 5 * np.sin(2 * np.pi * np.arange(24) / 24)
    x = np.broadcast_to(series[None, :, None, None], (2, 24, 8, 8))
    np.testing.assert_allclose(daily_extrema(x), [[series.max(), series.min()]] * 2)
    assert series.max() == pytest.approx(295) and series.min() == pytest.approx(285)


@PROPS
@given(st.integers(0, 2**32 - 1))
def test_extrema_order_and_daily_mean(seed):
    x = random_corpus(seed)
    e = daily_extrema(x)
    assert np.all(e[:, 0] >= e[:, 1])
    dm = daily_means(x)
    assert np.all((dm <= e[:, 0] + 1e-9) & (dm >= e[:, 1] - 1e-9))


def test_metrics_are_pure():
    a, b = random_corpus(1), random_corpus(2)
    r1 = MetricReport("spacd", spacd(a, b), timestamp="t").to_dict()
    r2 = MetricReport("spacd", spacd(a, b), timestamp="t").to_dict()
    assert json.dumps(r1) == json.dumps(r2)
    with pytest.raises(ValueError, match="finite"):
        MetricReport("spacd", float("nan"))
