"""Adversarial training loop, optimizer, checkpoints and conditioned sampling."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import __version__
from .grid_store import ConditionLabel, StandardizationStats, Standardizer
from .nets import ArchConfig, build_models, check_labels, metadata
from .objectives import LossConfig, loss_d_spatial, loss_d_temporal, loss_g, loss_g_tgp
from .tensor_engine import load_tensors, no_grad, save_tensors

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6
LOG_FIELDS = ("step", "epoch", "phase", "loss_dt", "loss_ds", "loss_g", "gp_t", "gp_s", "lr", "grad_norm")


class TrainingDiverged(RuntimeError):
    """A loss became non-finite or exceeded the divergence limit."""

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


# -- optimizer --------------------------------------------------------------------

def adam_step(param: np.ndarray, grad: np.ndarray, state: dict, lr: float,
              beta1: float = 0.5, beta2: float = 0.99, eps: float = 1e-8) -> bool:
    """One bias-corrected ADAM update in place.  Returns False (and leaves
    everything untouched) when the gradient is not finite."""
    if not np.all(np.isfinite(grad)):
        return False
    if "m" not in state:
        state["m"] = np.zeros_like(param, dtype=np.float64)
        state["v"] = np.zeros_like(param, dtype=np.float64)
        state["t"] = 0
    state["t"] += 1
    t = state["t"]
    g = grad.astype(np.float64)
    state["m"] = beta1 * state["m"] + (1 - beta1) * g
    state["v"] = beta2 * state["v"] + (1 - beta2) * g * g
    m_hat = state["m"] / (1 - beta1**t)
    v_hat = state["v"] / (1 - beta2**t)
    param -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype)
    return True


class Adam:
    def __init__(self, params, beta1: float = 0.5, beta2: float = 0.99, eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = [{} for _ in self.params]
        self.skipped = 0

    def step(self, lr: float) -> bool:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        if not all(np.all(np.isfinite(g)) for g in grads):
            self.skipped += 1
            logger.warning("non-finite gradient; optimizer step skipped")
            return False
        for p, g, s in zip(self.params, grads, self.state):
            adam_step(p.data, g, s, lr, self.beta1, self.beta2, self.eps)
        return True


def lr_schedule(epoch: int, base_lr: float, gamma: float) -> float:
    """Exponential decay applied once every 100 epochs."""
    return base_lr * gamma ** (epoch // 100)


def _grad_norm(module) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in module.parameters() if p.grad is not None)))


# -- configuration and logs ---------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    batch_size: int = 64
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.99
    lr_decay_gamma: float = 0.98
    n_critic: int = 1
    lambda_gp: float = 1.0
    lambda_tp: float = 0.0
    variant: str = "dual_critic"
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.n_critic < 1:
            raise ValueError("epochs, batch_size and n_critic must be >= 1")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("ADAM betas must lie in [0, 1)")
        LossConfig(self.lambda_gp, self.lambda_tp, self.variant)

    @property
    def loss(self) -> LossConfig:
        return LossConfig(self.lambda_gp, self.lambda_tp, self.variant)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    epochs: list = field(default_factory=list)

    def append(self, **row):
        if self.rows and row["step"] <= self.rows[-1]["step"]:
            raise ValueError("train log steps must increase")
        self.rows.append(row)

    def phase_counts(self) -> dict:
        counts = {}
        for r in self.rows:
            counts[r["phase"]] = counts.get(r["phase"], 0) + 1
        return counts

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in LOG_FIELDS})


# -- checkpoints ----------------------------------------------------------------------

@dataclass
class GANCheckpoint:
    arch: ArchConfig
    stats: StandardizationStats
    generator: dict
    spatial_critic: dict
    temporal_critic: dict
    base_year: int = 1979
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_models(cls, arch, stats, g, d_s, d_t, base_year=1979, meta=None):
        copy = lambda sd: {k: np.array(v, copy=True) for k, v in sd.items()}
        return cls(arch, stats, copy(g.state_dict()), copy(d_s.state_dict()), copy(d_t.state_dict()),
                   base_year, dict(meta or {}))

    def models(self, dtype=np.float32):
        g, d_s, d_t = build_models(self.arch, 0, dtype)
        g.load_state_dict(self.generator)
        d_s.load_state_dict(self.spatial_critic)
        d_t.load_state_dict(self.temporal_critic)
        return g, d_s, d_t

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_tensors(self.generator, directory / "generator.tpar")
        save_tensors(self.spatial_critic, directory / "spatial_critic.tpar")
        save_tensors(self.temporal_critic, directory / "temporal_critic.tpar")
        meta = dict(self.meta)
        meta.update(metadata(self.arch))
        meta.update({
            "standardization": self.stats.as_dict(),
            "base_year": self.base_year,
            "artifact_version": __version__,
        })
        (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        return directory

    @classmethod
    def load(cls, directory) -> "GANCheckpoint":
        directory = Path(directory)
        meta = json.loads((directory / "meta.json").read_text())
        if "standardization" not in meta:
            raise ValueError(f"{directory}: checkpoint has no standardization stats")
        s = meta["standardization"]
        stats = StandardizationStats(float(s["mean"]), float(s["std"]), s.get("convention", "population"))
        return cls(
            ArchConfig.from_dict(meta["arch"]), stats,
            load_tensors(directory / "generator.tpar"),
            load_tensors(directory / "spatial_critic.tpar"),
            load_tensors(directory / "temporal_critic.tpar"),
            int(meta.get("base_year", 1979)), meta,
        )


# -- training -----------------------------------------------------------------------------

def _corpus(buckets, stats: StandardizationStats | None):
    buckets = list(buckets)
    if not buckets:
        raise ValueError("no buckets to train on")
    scaler = Standardizer.from_stats(stats) if stats is not None else Standardizer().fit(buckets)
    x = np.concatenate([scaler.transform(np.asarray(b.samples)) for b in buckets]).astype(np.float32)
    labels = np.concatenate([np.repeat(b.label.raw()[None], len(b), axis=0) for b in buckets])
    return x, labels, scaler.stats_


def _guard(values, step, snapshot):
    for name, v in values.items():
        if v is not None and (not np.isfinite(v) or abs(v) > DIVERGENCE_LIMIT):
            raise TrainingDiverged(f"{name}={v} at step {step}; training aborted", last_good=snapshot)


def train(buckets, cfg: TrainConfig = TrainConfig(), arch: ArchConfig | None = None,
          stats: StandardizationStats | None = None, base_year: int = 1979,
          out_dir=None, callback=None):
    """Train G against the critics on Kelvin buckets.

    Each real batch gets ``n_critic`` critic updates (temporal then spatial,
    each with its own ADAM state) followed by one generator update.
    ``callback(epoch, checkpoint)`` is invoked before the first epoch
    (epoch 0) and after every epoch.  Returns ``(checkpoint, log)``.
    """
    arch = arch or ArchConfig.toy()
    x, labels, stats = _corpus(buckets, stats)
    root = np.random.default_rng(cfg.seed)
    g, d_s, d_t = build_models(arch, int(root.integers(2**31)))
    rng = np.random.default_rng(root.integers(2**31))
    loss_cfg = cfg.loss
    dual = loss_cfg.variant == "dual_critic"
    opt_g = Adam(g.parameters(), cfg.adam_beta1, cfg.adam_beta2)
    opt_s = Adam(d_s.parameters(), cfg.adam_beta1, cfg.adam_beta2)
    opt_t = Adam(d_t.parameters(), cfg.adam_beta1, cfg.adam_beta2)
    meta = {"train_config": cfg.to_dict()}
    snapshot = lambda: GANCheckpoint.from_models(arch, stats, g, d_s, d_t, base_year, meta)
    log = TrainLog()
    last_good = snapshot()
    if callback is not None:
        callback(0, last_good)
    step = 0
    n = len(x)
    g.train()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr_g = lr_schedule(epoch, cfg.lr_g, cfg.lr_decay_gamma)
        lr_d = lr_schedule(epoch, cfg.lr_d, cfg.lr_decay_gamma)
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            real, lab = x[idx], labels[idx]
            b = len(idx)
            for _ in range(cfg.n_critic):
                z = rng.standard_normal((b, arch.noise_dim)).astype(np.float32)
                with no_grad():
                    fake = g(z, lab).data
                loss_t = gp_t = None
                if dual:
                    lt, gp_t = loss_d_temporal(d_t, real, fake, lab, loss_cfg, u=rng.uniform(size=b))
                    d_t.zero_grad()
                    lt.backward()
                    opt_t.step(lr_d)
                    loss_t = lt.item()
                ls, gp_s = loss_d_spatial(d_s, real, fake, lab, loss_cfg, u=rng.uniform(size=b))
                d_s.zero_grad()
                ls.backward()
                opt_s.step(lr_d)
                step += 1
                log.append(step=step, epoch=epoch, phase="critic", loss_dt=loss_t, loss_ds=ls.item(),
                           loss_g=None, gp_t=gp_t, gp_s=gp_s, lr=lr_d, grad_norm=_grad_norm(d_s))
                _guard({"loss_dt": loss_t, "loss_ds": ls.item()}, step, last_good)
            z = rng.standard_normal((b, arch.noise_dim)).astype(np.float32)
            fake = g(z, lab)
            lg = loss_g(d_s, d_t, fake, lab) if dual else loss_g_tgp(d_s, fake, lab, loss_cfg)
            g.zero_grad()
            lg.backward()
            opt_g.step(lr_g)
            step += 1
            log.append(step=step, epoch=epoch, phase="generator", loss_dt=None, loss_ds=None,
                       loss_g=lg.item(), gp_t=None, gp_s=None, lr=lr_g, grad_norm=_grad_norm(g))
            _guard({"loss_g": lg.item()}, step, last_good)
        log.epochs.append({"epoch": epoch, "wall_time": time.perf_counter() - t0})
        last_good = snapshot()
        if out_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            last_good.save(Path(out_dir) / f"epoch_{epoch + 1:05d}")
        if callback is not None:
            callback(epoch + 1, last_good)
    return last_good, log


def sample_conditioned(ckpt: GANCheckpoint, label, n: int, seed: int = 0, batch_size: int = 256) -> np.ndarray:
    """Draw ``n`` Kelvin samples for one label; deterministic in (seed, label, n)."""
    if ckpt.stats is None:
        raise ValueError("checkpoint has no standardization stats")
    if n < 0:
        raise ValueError("n must be >= 0")
    raw = label.raw() if isinstance(label, ConditionLabel) else check_labels(label)[0]
    out = np.empty((n, 24, 8, 8), dtype=np.float64)
    if n == 0:
        return out
    g, _, _ = ckpt.models()
    g.eval()
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, ckpt.arch.noise_dim)).astype(np.float32)
    with no_grad():
        for start in range(0, n, batch_size):
            zb = z[start:start + batch_size]
            out[start:start + len(zb)] = g(zb, np.repeat(raw[None], len(zb), axis=0)).data
    return Standardizer.from_stats(ckpt.stats).inverse_transform(out)


class TemperatureGAN(BaseEstimator):
    """Estimator wrapper: ``fit`` on Kelvin buckets, ``sample`` per label."""

    def __init__(self, arch="toy", epochs=1, batch_size=64, lr_g=1e-4, lr_d=1e-4, adam_beta1=0.5,
                 adam_beta2=0.99, lr_decay_gamma=0.98, n_critic=1, lambda_gp=1.0, lambda_tp=0.0,
                 variant="dual_critic", seed=0, base_year=1979):
        self.arch = arch
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_g = lr_g
        self.lr_d = lr_d
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.lr_decay_gamma = lr_decay_gamma
        self.n_critic = n_critic
        self.lambda_gp = lambda_gp
        self.lambda_tp = lambda_tp
        self.variant = variant
        self.seed = seed
        self.base_year = base_year

    def _arch(self) -> ArchConfig:
        if isinstance(self.arch, ArchConfig):
            return self.arch
        if self.arch == "toy":
            return ArchConfig.toy()
        if self.arch == "full":
            return ArchConfig()
        raise ValueError(f"arch must be 'toy', 'full' or an ArchConfig, got {self.arch!r}")

    def train_config(self) -> TrainConfig:
        params = {k: v for k, v in self.get_params().items() if k not in ("arch", "base_year")}
        return TrainConfig(**params)

    def fit(self, X, y=None, callback=None):
        self.checkpoint_, self.log_ = train(X, self.train_config(), self._arch(),
                                            base_year=self.base_year, callback=callback)
        return self

    def sample(self, label, n: int, seed: int = 0) -> np.ndarray:
        check_is_fitted(self, "checkpoint_")
        return sample_conditioned(self.checkpoint_, label, n, seed)


def with_overrides(cfg: TrainConfig, **overrides) -> TrainConfig:
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
