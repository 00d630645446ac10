"""Wasserstein critic/generator losses with interpolation gradient penalty.

Critic losses take detached real/fake batches (numpy arrays or untracked
tensors); the generator losses require a fake batch that is still attached
to the generator's graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import hourly_differences
from .tensor_engine import Tensor, grad_wrt_input
from .tensor_engine import functional as F
from .tensor_engine.tensor import mean, mul, sub

VARIANTS = ("dual_critic", "ex_wgan_tgp")


@dataclass(frozen=True)
class LossConfig:
    lambda_gp: float = 1.0
    lambda_tp: float = 0.0
    variant: str = "dual_critic"

    def __post_init__(self):
        if self.lambda_gp < 0 or self.lambda_tp < 0:
            raise ValueError("lambda_gp and lambda_tp must be non-negative")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def temporal_gradients(samples, dt: float = 1.0) -> np.ndarray:
    """Hourly forward differences of (24, H, W) or (N, 24, H, W) arrays."""
    a = _arr(samples)
    axis = a.ndim - 3
    if a.ndim not in (3, 4) or a.shape[axis] != 24:
        raise ValueError(f"temporal_gradients: need 24 frames, got shape {a.shape}")
    return np.diff(a, axis=axis) / dt


def gp_interpolate(real, fake, u) -> np.ndarray:
    """u * real + (1 - u) * fake with one u per sample pair."""
    real, fake = _arr(real), _arr(fake)
    if real.shape != fake.shape:
        raise ValueError(f"gp_interpolate: real {real.shape} and fake {fake.shape} differ")
    u = np.asarray(u, dtype=real.dtype).reshape((-1,) + (1,) * (real.ndim - 1))
    if u.shape[0] != real.shape[0]:
        raise ValueError(f"gp_interpolate: need {real.shape[0]} weights, got {u.shape[0]}")
    if np.any((u < 0) | (u > 1)):
        raise ValueError("gp_interpolate: weights must lie in [0, 1]")
    return u * real + (1 - u) * fake


def gradient_penalty(critic, interp, labels) -> Tensor:
    """mean over the batch of (||grad_x critic(x)||_2 - 1)^2, differentiable in the critic."""
    x = Tensor(_arr(interp), requires_grad=True)
    g = grad_wrt_input(critic(x, labels).sum(), x, create_graph=True)
    norms = F.l2_norm(g)
    return mean(sub(norms, 1.0) ** 2)


def _critic_loss(critic, real, fake, labels, cfg: LossConfig, u, rng):
    real, fake = _arr(real), _arr(fake)
    if real.shape != fake.shape:
        raise ValueError(f"critic loss: real {real.shape} and fake {fake.shape} differ")
    wdist = sub(mean(critic(fake, labels)), mean(critic(real, labels)))
    if cfg.lambda_gp == 0:
        return wdist, 0.0
    if u is None:
        rng = rng if rng is not None else np.random.default_rng()
        u = rng.uniform(0.0, 1.0, size=real.shape[0])
    gp = gradient_penalty(critic, gp_interpolate(real, fake, u), labels)
    return wdist + mul(gp, cfg.lambda_gp), gp.item()


def loss_d_spatial(d_s, real, fake, labels, cfg: LossConfig = LossConfig(), u=None, rng=None):
    """Spatial critic loss; returns ``(loss tensor, gradient-penalty value)``."""
    return _critic_loss(d_s, real, fake, labels, cfg, u, rng)


def loss_d_temporal(d_t, real, fake, labels, cfg: LossConfig = LossConfig(), u=None, rng=None):
    """Temporal critic loss.

    The penalty differentiates with respect to the interpolated 24-frame map;
    the critic's own first stage takes the hourly differences.
    """
    return _critic_loss(d_t, real, fake, labels, cfg, u, rng)


def _require_attached(fake) -> Tensor:
    if not isinstance(fake, Tensor) or not fake.requires_grad:
        raise ValueError("generator loss needs a fake batch attached to the generator graph")
    return fake


def loss_g(d_s, d_t, fake, labels) -> Tensor:
    fake = _require_attached(fake)
    return sub(mul(mean(d_s(fake, labels)), -1.0), mean(d_t(fake, labels)))


def temporal_penalty(fake, dt: float = 1.0) -> Tensor:
    """Batch mean of each sample's Frobenius norm of hourly differences."""
    return mean(F.l2_norm(hourly_differences(fake, dt)))


def loss_g_tgp(d, fake, labels, cfg: LossConfig = LossConfig(variant="ex_wgan_tgp")) -> Tensor:
    """Single-critic generator loss plus a weighted temporal-gradient norm."""
    fake = _require_attached(fake)
    adv = mul(mean(d(fake, labels)), -1.0)
    if cfg.lambda_tp == 0:
        return adv
    return adv + mul(temporal_penalty(fake), cfg.lambda_tp)
