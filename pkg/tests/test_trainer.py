import math

import numpy as np
import pytest

from tempgan.grid_store import ConditionLabel, Standardizer
from tempgan.nets import ArchConfig, build_models
from tempgan.objectives import LossConfig, loss_d_spatial, loss_d_temporal
from tempgan.synthetic import synthetic_buckets
from tempgan.trainer import (
    Adam,
    GANCheckpoint,
    TemperatureGAN,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    lr_schedule,
    sample_conditioned,
    train,
)
from tempgan.tensor_engine import Parameter, no_grad

LABELS = [ConditionLabel(1, 1, 1, 0), ConditionLabel(7, 2, 1, 0)]


def scalar_adam(grads, lr, b1, b2, eps=1e-8):
    """Plain-python reference ADAM on one scalar."""
    theta, m, v = 0.0, 0.0, 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        out.append(theta)
    return out


@pytest.mark.parametrize("b1", [0.5, 0.0])
def test_adam_matches_scalar_reference(b1):
    grads = [1.0] * 5 + [0.3, -2.0, 0.7, 1.1, -0.4]
    p = np.zeros(1)
    state = {}
    ours = []
    for g in grads:
        adam_step(p, np.array([g]), state, 0.1, b1, 0.99)
        ours.append(p[0])
    np.testing.assert_allclose(ours, scalar_adam(grads, 0.1, b1, 0.99), rtol=1e-12)
    assert ours[0] == pytest.approx(-0.1, rel=1e-6)


def test_adam_zero_gradient_is_noop():
    p = np.array([1.5, -2.0])
    state = {}
    adam_step(p, np.zeros(2), state, 0.1)
    assert p.tolist() == [1.5, -2.0]
    assert not state["m"].any() and not state["v"].any()


def test_adam_skips_non_finite():
    p = Parameter(np.array([1.0]))
    p.grad = np.array([np.nan])
    opt = Adam([p])
    assert opt.step(0.1) is False
    assert p.data[0] == 1.0 and opt.skipped == 1


@pytest.mark.parametrize("epoch,gamma,expected", [(0, 0.98, 1.0), (99, 0.98, 1.0), (250, 0.9, 0.81)])
def test_lr_schedule(epoch, gamma, expected):
    assert lr_schedule(epoch, 1e-3, gamma) == pytest.approx(1e-3 * expected)


@pytest.fixture(scope="module")
def corpus():
    return synthetic_buckets(LABELS, 8, seed=3)


@pytest.mark.parametrize("n_critic", [1, 3])
def test_one_batch_bookkeeping(corpus, n_critic):
    cfg = TrainConfig(epochs=1, batch_size=64, n_critic=n_critic)
    _, log = train(corpus, cfg)
    assert log.phase_counts() == {"critic": n_critic, "generator": 1}
    assert [r["step"] for r in log.rows] == list(range(1, n_critic + 2))


def test_ds_only_variant_logs_no_temporal_loss(corpus):
    cfg = TrainConfig(epochs=1, batch_size=64, variant="ex_wgan_tgp", lambda_tp=0.1)
    _, log = train(corpus, cfg)
    assert all(r["loss_dt"] is None for r in log.rows)


def test_fixed_seed_bit_identical(corpus, tmp_path):
    cfg = TrainConfig(epochs=2, batch_size=8, seed=11)
    a, la = train(corpus, cfg)
    b, lb = train(corpus, cfg)
    for part in ("generator", "spatial_critic", "temporal_critic"):
        da, db = getattr(a, part), getattr(b, part)
        assert all(da[k].tobytes() == db[k].tobytes() for k in da)
    assert la.rows == lb.rows
    la.to_csv(tmp_path / "a.csv")
    lb.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_checkpoint_round_trip_and_sampling(corpus, tmp_path):
    ckpt, _ = train(corpus, TrainConfig(epochs=1, batch_size=16, seed=2))
    ckpt.save(tmp_path / "ck")
    back = GANCheckpoint.load(tmp_path / "ck")
    assert back.stats == ckpt.stats and back.arch == ckpt.arch
    for k, v in ckpt.generator.items():
        assert back.generator[k].tobytes() == v.tobytes()
    a = sample_conditioned(ckpt, LABELS[0], 5, seed=4)
    b = sample_conditioned(back, LABELS[0], 5, seed=4)
    assert a.shape == (5, 24, 8, 8) and np.array_equal(a, b)
    assert sample_conditioned(back, LABELS[0], 0).shape == (0, 24, 8, 8)
    assert not np.array_equal(a, sample_conditioned(back, LABELS[0], 5, seed=5))


def test_checkpoint_without_stats_rejected(corpus, tmp_path):
    ckpt, _ = train(corpus, TrainConfig(epochs=1, batch_size=16))
    ckpt.save(tmp_path / "ck")
    meta = (tmp_path / "ck" / "meta.json")
    import json

    d = json.loads(meta.read_text())
    del d["standardization"]
    meta.write_text(json.dumps(d))
    with pytest.raises(ValueError, match="standardization"):
        GANCheckpoint.load(tmp_path / "ck")


def test_periodic_checkpoints(corpus, tmp_path):
    train(corpus, TrainConfig(epochs=2, batch_size=16, checkpoint_every=1), out_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["epoch_00001", "epoch_00002"]


def test_divergence_guard_returns_last_good(corpus):
    cfg = TrainConfig(epochs=3, batch_size=16, lr_g=1e6, lr_d=1e6, lambda_gp=0.0)
    with pytest.raises(TrainingDiverged) as info:
        train(corpus, cfg)
    assert isinstance(info.value.last_good, GANCheckpoint)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(variant="nope")
    with pytest.raises(ValueError):
        TrainConfig(lr_g=-1)


def test_estimator_api(corpus):
    est = TemperatureGAN(epochs=1, batch_size=16, seed=1)
    assert est.get_params()["n_critic"] == 1
    est.set_params(n_critic=2)
    est.fit(corpus)
    assert est.log_.phase_counts()["critic"] == 2 * est.log_.phase_counts()["generator"]
    assert est.sample(LABELS[1], 3).shape == (3, 24, 8, 8)


def _critic_only(loss_fn, critic, steps=200, lam=10.0, lr=1e-4):
    buckets = synthetic_buckets(LABELS, 32, seed=8)
    scaler = Standardizer().fit(buckets)
    real = np.concatenate([scaler.transform(b.samples) for b in buckets]).astype(np.float32)
    lab = np.concatenate([np.repeat(b.label.raw()[None], len(b), 0) for b in buckets])
    g, _, _ = build_models(ArchConfig.toy(), 0)
    rng = np.random.default_rng(0)
    with no_grad():
        fake = g(rng.standard_normal((len(real), g.arch.noise_dim)).astype(np.float32), lab).data
    opt = Adam(critic.parameters())
    cfg = LossConfig(lambda_gp=lam)
    hist = []
    for _ in range(steps):
        idx = rng.choice(len(real), 16, replace=False)
        loss, gp = loss_fn(critic, real[idx], fake[idx], lab[idx], cfg, u=rng.uniform(size=16))
        critic.zero_grad()
        loss.backward()
        opt.step(lr)
        hist.append((loss.item(), gp))
    return np.array(hist)


@pytest.mark.parametrize("which", ["spatial", "temporal"])
def test_critic_separates_frozen_generator(which):
    _, d_s, d_t = build_models(ArchConfig.toy(), 5)
    critic, fn = (d_s, loss_d_spatial) if which == "spatial" else (d_t, loss_d_temporal)
    hist = _critic_only(fn, critic)
    assert hist[-20:, 0].mean() < 0  # separation grows
    assert hist[0, 1] > 0.1 and hist[:, 1].min() < 0.1
