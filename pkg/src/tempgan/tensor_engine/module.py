"""Parameter containers, layers and the ``TPAR`` checkpoint format."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import functional as F
from .tensor import Tensor

__all__ = [
    "Parameter",
    "Module",
    "Linear",
    "Conv1d",
    "ConvTranspose1d",
    "Conv2d",
    "BatchNorm",
    "save_tensors",
    "load_tensors",
]

TPAR_MAGIC = b"TPAR"
TPAR_VERSION = 1


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """Attribute-registered tree of parameters, buffers and submodules."""

    training = True

    def _children(self):
        for key, value in vars(self).items():
            if isinstance(value, (Module, Parameter)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Module, Parameter)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> list:
        out = []
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                out.append((name, value))
            else:
                out.extend(value.named_parameters(name + "."))
        return out

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> list:
        out = [(f"{prefix}{k}", v) for k, v in getattr(self, "_buffers", {}).items()]
        for key, value in self._children():
            if isinstance(value, Module):
                out.extend(value.named_buffers(f"{prefix}{key}."))
        return out

    def modules(self):
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = np.zeros_like(p.data)

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self, prefix: str = "") -> dict:
        state = {name: p.data for name, p in self.named_parameters(prefix)}
        state.update({name: b for name, b in self.named_buffers(prefix)})
        return dict(sorted(state.items()))

    def load_state_dict(self, state: dict, prefix: str = ""):
        own = {n: p for n, p in self.named_parameters(prefix)}
        bufs = {n: b for n, b in self.named_buffers(prefix)}
        missing = sorted((set(own) | set(bufs)) - set(state))
        if missing:
            raise KeyError(f"checkpoint is missing entries: {missing[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)
        for name, b in bufs.items():
            b[...] = state[name]
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng, shape, bound, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng, gain: float = 1.0, dtype=np.float32):
        bound = gain * np.sqrt(3.0 / n_in)
        self.weight = Parameter(_uniform(rng, (n_out, n_in), bound, dtype))
        self.bias = Parameter(np.zeros(n_out, dtype=dtype))

    def forward(self, x):
        return F.dense(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, rng, padding=0, gain=1.0, dtype=np.float32):
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        bound = gain * np.sqrt(3.0 / (c_in * kh * kw))
        self.weight = Parameter(_uniform(rng, (c_out, c_in, kh, kw), bound, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))
        self.padding = padding

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, padding=self.padding)


class Conv1d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, gain=1.0, dtype=np.float32):
        bound = gain * np.sqrt(3.0 / (c_in * kernel))
        self.weight = Parameter(_uniform(rng, (c_out, c_in, kernel), bound, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))
        self.stride = stride

    def forward(self, x):
        return F.conv1d(x, self.weight, self.bias, stride=self.stride)


class ConvTranspose1d(Module):
    def __init__(self, c_in, c_out, kernel, rng, gain=1.0, dtype=np.float32):
        bound = gain * np.sqrt(3.0 / (c_in * kernel))
        self.weight = Parameter(_uniform(rng, (c_in, c_out, kernel), bound, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))

    def forward(self, x):
        return F.conv_transpose1d(x, self.weight, self.bias)


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        self.weight = Parameter(np.ones(channels, dtype=dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype))
        self._buffers = {
            "running_mean": np.zeros(channels, dtype=dtype),
            "running_var": np.ones(channels, dtype=dtype),
        }
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return F.batch_norm(x, self.weight, self.bias, self._buffers["running_mean"],
                            self._buffers["running_var"], self.training, self.momentum, self.eps)


# -- TPAR checkpoint ---------------------------------------------------------------
# magic, u16 version, u32 count, then per entry sorted by name:
# u16 name length, utf-8 name, u8 ndim, u32 dims..., f32 little-endian payload

def save_tensors(state: dict, path) -> None:
    parts = [TPAR_MAGIC, struct.pack("<HI", TPAR_VERSION, len(state))]
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_tensors(path) -> dict:
    buf = Path(path).read_bytes()
    if buf[:4] != TPAR_MAGIC:
        raise ValueError(f"{path}: not a TPAR file")
    version, count = struct.unpack_from("<HI", buf, 4)
    if version != TPAR_VERSION:
        raise ValueError(f"{path}: unsupported TPAR version {version}")
    pos = 10
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        n = int(np.prod(shape, dtype=np.int64))
        if pos + 4 * n > len(buf):
            raise ValueError(f"{path}: truncated payload for {name}")
        state[name] = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(shape).copy()
        pos += 4 * n
    return state
