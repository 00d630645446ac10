"""Generator, spatial critic, temporal critic and the label embedding block.

``ArchConfig()`` reproduces the full-size layer tables; ``ArchConfig.toy()``
keeps every spatial/temporal shape but narrows channel and hidden widths so
desk-scale training stays cheap.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .grid_store import HOURS_PER_DAY, LABEL_DIM, REGION_CELLS
from .tensor_engine import BatchNorm, Conv1d, Conv2d, ConvTranspose1d, Linear, Module, Tensor, as_tensor
from .tensor_engine import functional as F
from .tensor_engine.tensor import concat, getitem, sub

RELU_GAIN = float(np.sqrt(2.0))
LEAKY_SLOPE = 0.2
LEAKY_GAIN = float(np.sqrt(2.0 / (1.0 + LEAKY_SLOPE**2)))
REGION_SCALE = 1.0 / 32.0
PERIOD_SCALE = 1.0 / 16.0
INIT_SCHEME = "uniform fan-in; gain sqrt(2) before relu, sqrt(2/1.04) before leaky_relu, 1 otherwise"

# fixed by the 28x28 intermediate image and the 5x5 conv chain
_G_SEQUENCE_LENGTH = 100
_G_IMAGE_SIZE = 28


@dataclass(frozen=True)
class ArchConfig:
    noise_dim: int = 100
    embed_month: int = 56
    embed_region: int = 28
    embed_period: int = 16
    g_fc: tuple = (400, 800, 100)
    g_convt_channels: tuple = (10, 10, 64, 112)
    g_convt_kernels: tuple = (3, 3, 5, 5)
    g_conv2d_channels: tuple = (2, 4, 16, 24)
    ds_channels: int = 24
    ds_fc: tuple = (100, 150, 50)
    dt_channels: tuple = (16, 4)
    dt_fc: tuple = (164, 200, 100)
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        if self.g_fc[-1] != _G_SEQUENCE_LENGTH:
            raise ValueError(f"last generator FC width must be {_G_SEQUENCE_LENGTH}, got {self.g_fc[-1]}")
        length = _G_SEQUENCE_LENGTH + sum(k - 1 for k in self.g_convt_kernels)
        if (length - 1) // 4 + 1 != _G_IMAGE_SIZE:
            raise ValueError(f"transposed-conv kernels {self.g_convt_kernels} do not reach length 112")
        if len(self.g_conv2d_channels) != 4:
            raise ValueError("generator needs exactly four hidden Conv2D stages")

    @property
    def embed_dim(self) -> int:
        return self.embed_month + self.embed_region + self.embed_period

    @classmethod
    def toy(cls) -> "ArchConfig":
        return cls(
            noise_dim=16, embed_month=8, embed_region=4, embed_period=4,
            g_fc=(64, 96, 100), g_convt_channels=(4, 4, 8, 16),
            g_conv2d_channels=(2, 4, 8, 12),
            ds_channels=12, ds_fc=(32, 48, 16),
            dt_channels=(8, 4), dt_fc=(64, 64, 32),
        )

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def check_labels(labels) -> np.ndarray:
    labels = np.asarray(labels.data if isinstance(labels, Tensor) else labels, dtype=np.float64)
    if labels.ndim == 1:
        labels = labels[None]
    if labels.ndim != 2 or labels.shape[1] != LABEL_DIM:
        raise ValueError(f"labels must be (N, {LABEL_DIM}) raw vectors, got {labels.shape}")
    onehot = labels[:, :12]
    if not (np.all((onehot == 0) | (onehot == 1)) and np.all(onehot.sum(axis=1) == 1)):
        raise ValueError("month one-hot is invalid: each label needs exactly one month set")
    return labels


def _check_samples(x: Tensor, op: str) -> None:
    if x.ndim != 4 or x.shape[1:] != (HOURS_PER_DAY, REGION_CELLS, REGION_CELLS):
        raise ValueError(f"{op}: expected (N, 24, 8, 8) samples, got {x.shape}")


class LabelEmbedding(Module):
    """Per-variable dense blocks for month, region and period, concatenated."""

    def __init__(self, arch: ArchConfig, rng, dtype=np.float32):
        self.month = Linear(12, arch.embed_month, rng, LEAKY_GAIN, dtype)
        self.region = Linear(2, arch.embed_region, rng, LEAKY_GAIN, dtype)
        self.period = Linear(1, arch.embed_period, rng, LEAKY_GAIN, dtype)
        self.dtype = dtype

    def forward(self, labels) -> Tensor:
        lab = check_labels(labels).astype(self.dtype)
        month = Tensor(lab[:, :12])
        region = Tensor(lab[:, 12:14] * REGION_SCALE)
        period = Tensor(lab[:, 14:15] * PERIOD_SCALE)
        parts = [
            F.leaky_relu(self.month(month), LEAKY_SLOPE),
            F.leaky_relu(self.region(region), LEAKY_SLOPE),
            F.leaky_relu(self.period(period), LEAKY_SLOPE),
        ]
        return concat(parts, axis=1)


def _note(trace, t: Tensor) -> Tensor:
    if trace is not None:
        trace.append(tuple(t.shape))
    return t


class Generator(Module):
    def __init__(self, arch: ArchConfig = ArchConfig(), rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.arch = arch
        self.dtype = dtype
        self.embedding = LabelEmbedding(arch, rng, dtype)
        widths = [arch.noise_dim + arch.embed_dim, *arch.g_fc]
        self.fc = [Linear(a, b, rng, RELU_GAIN, dtype) for a, b in zip(widths[:-1], widths[1:])]
        chans = [1, *arch.g_convt_channels]
        self.convt = [ConvTranspose1d(a, b, k, rng, RELU_GAIN, dtype)
                      for a, b, k in zip(chans[:-1], chans[1:], arch.g_convt_kernels)]
        self.convt_bn = [BatchNorm(c, arch.bn_momentum, arch.bn_eps, dtype) for c in chans[1:]]
        self.squeeze = Conv1d(chans[-1], _G_IMAGE_SIZE, 1, rng, stride=4, dtype=dtype)
        c2 = [1, *arch.g_conv2d_channels]
        self.conv = [Conv2d(a, b, 5, rng, gain=RELU_GAIN if i == 0 else 1.0, dtype=dtype)
                     for i, (a, b) in enumerate(zip(c2[:-1], c2[1:]))]
        self.conv_bn = [BatchNorm(c, arch.bn_momentum, arch.bn_eps, dtype) for c in c2[1:]]
        self.out = Conv2d(c2[-1], HOURS_PER_DAY, 5, rng, dtype=dtype)

    def forward(self, z, labels, trace: list | None = None) -> Tensor:
        z = as_tensor(np.asarray(z.data if isinstance(z, Tensor) else z, dtype=self.dtype))
        if z.ndim != 2 or z.shape[1] != self.arch.noise_dim:
            raise ValueError(f"generator: noise must be (N, {self.arch.noise_dim}), got {z.shape}")
        emb = self.embedding(labels)
        if emb.shape[0] != z.shape[0]:
            raise ValueError(f"generator: {z.shape[0]} noise rows but {emb.shape[0]} labels")
        h = _note(trace, concat([z, emb], axis=1))
        for layer in self.fc:
            h = _note(trace, F.relu(layer(h)))
        h = _note(trace, F.unsqueeze(h, 1))
        for layer, bn in zip(self.convt, self.convt_bn):
            h = _note(trace, F.relu(bn(layer(h))))
        h = _note(trace, self.squeeze(h))
        h = _note(trace, F.unsqueeze(h, 1))
        for i, (layer, bn) in enumerate(zip(self.conv, self.conv_bn)):
            act = F.relu if i == 0 else F.tanh
            h = _note(trace, act(bn(layer(h))))
        return _note(trace, self.out(h))

    def n_parameters(self, include_embedding: bool = True) -> int:
        total = super().n_parameters()
        return total if include_embedding else total - self.embedding.n_parameters()


class SpatialCritic(Module):
    def __init__(self, arch: ArchConfig = ArchConfig(), rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        c = arch.ds_channels
        self.dtype = dtype
        self.embedding = LabelEmbedding(arch, rng, dtype)
        self.conv = [
            Conv2d(HOURS_PER_DAY, c, 3, rng, padding=1, gain=LEAKY_GAIN, dtype=dtype),
            Conv2d(c, c, 3, rng, padding=1, gain=LEAKY_GAIN, dtype=dtype),
            Conv2d(c, c, 3, rng, gain=LEAKY_GAIN, dtype=dtype),
            Conv2d(c, c, 3, rng, gain=LEAKY_GAIN, dtype=dtype),
            Conv2d(c, c, 3, rng, gain=LEAKY_GAIN, dtype=dtype),
            Conv2d(c, c, 2, rng, gain=LEAKY_GAIN, dtype=dtype),
        ]
        f1, f2, f3 = arch.ds_fc
        self.fc_in = Linear(c, f1, rng, LEAKY_GAIN, dtype)
        self.fc = [Linear(f1 + arch.embed_dim, f2, rng, LEAKY_GAIN, dtype),
                   Linear(f2, f3, rng, LEAKY_GAIN, dtype)]
        self.out = Linear(f3, 1, rng, 1.0, dtype)

    def forward(self, x, labels, trace: list | None = None) -> Tensor:
        x = as_tensor(x)
        _check_samples(x, "spatial critic")
        h = _note(trace, x)
        for layer in self.conv:
            h = _note(trace, F.leaky_relu(layer(h), LEAKY_SLOPE))
        h = _note(trace, F.flatten(h))
        h = _note(trace, F.leaky_relu(self.fc_in(h), LEAKY_SLOPE))
        h = _note(trace, concat([h, self.embedding(labels)], axis=1))
        for layer in self.fc:
            h = _note(trace, F.leaky_relu(layer(h), LEAKY_SLOPE))
        return _note(trace, self.out(h))


def hourly_differences(x, dt: float = 1.0) -> Tensor:
    """Forward differences along the hour axis: (N, 24, ...) -> (N, 23, ...)."""
    x = as_tensor(x)
    later = getitem(x, (slice(None), slice(1, None)))
    earlier = getitem(x, (slice(None), slice(None, -1)))
    d = sub(later, earlier)
    return d if dt == 1.0 else d * (1.0 / dt)


class TemporalCritic(Module):
    def __init__(self, arch: ArchConfig = ArchConfig(), rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        c1, c2 = arch.dt_channels
        self.dtype = dtype
        self.embedding = LabelEmbedding(arch, rng, dtype)
        self.conv = [Conv2d(HOURS_PER_DAY - 1, c1, 3, rng, gain=LEAKY_GAIN, dtype=dtype),
                     Conv2d(c1, c2, 3, rng, gain=LEAKY_GAIN, dtype=dtype)]
        widths = [c2 * 4 * 4 + arch.embed_dim, *arch.dt_fc]
        self.fc = [Linear(a, b, rng, LEAKY_GAIN, dtype) for a, b in zip(widths[:-1], widths[1:])]
        self.out = Linear(widths[-1], 1, rng, 1.0, dtype)

    def forward(self, x, labels, trace: list | None = None) -> Tensor:
        x = as_tensor(x)
        _check_samples(x, "temporal critic")
        _note(trace, x)
        h = _note(trace, hourly_differences(x))
        for layer in self.conv:
            h = _note(trace, F.leaky_relu(layer(h), LEAKY_SLOPE))
        h = _note(trace, F.flatten(h))
        h = _note(trace, concat([h, self.embedding(labels)], axis=1))
        for layer in self.fc:
            h = _note(trace, F.leaky_relu(layer(h), LEAKY_SLOPE))
        return _note(trace, self.out(h))


def build_models(arch: ArchConfig, seed: int, dtype=np.float32) -> tuple:
    """Generator, spatial critic and temporal critic from one seed."""
    rng = np.random.default_rng(seed)
    return (Generator(arch, rng, dtype), SpatialCritic(arch, rng, dtype), TemporalCritic(arch, rng, dtype))


def embed_label(embedding: LabelEmbedding, label) -> np.ndarray:
    """100-dim (embed_dim) vector for one ConditionLabel or raw 15-vector."""
    raw = label.raw() if hasattr(label, "raw") else label
    return embedding(np.asarray(raw)[None]).data[0]


def generate(g: Generator, z, labels, trace: list | None = None) -> Tensor:
    return g(z, labels, trace)


def score_spatial(d: SpatialCritic, samples, labels, trace: list | None = None) -> Tensor:
    return d(samples, labels, trace)


def score_temporal(d: TemporalCritic, samples, labels, trace: list | None = None) -> Tensor:
    return d(samples, labels, trace)


def metadata(arch: ArchConfig) -> dict:
    return {
        "arch": arch.to_dict(),
        "init_scheme": INIT_SCHEME,
        "embedding_split": {"month": arch.embed_month, "region": arch.embed_region, "period": arch.embed_period},
        "label_scaling": {"region": REGION_SCALE, "period": PERIOD_SCALE},
        "batch_norm": {"momentum": arch.bn_momentum, "eps": arch.bn_eps, "affine": True},
        "leaky_relu_slope": LEAKY_SLOPE,
    }
