"""Dense tensors with reverse-mode differentiation.

Every backward rule is written in terms of other :class:`Tensor` ops, so a
gradient computed with ``create_graph=True`` is itself differentiable.  That
is what lets a gradient penalty be backpropagated into critic parameters.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

__all__ = [
    "Tensor",
    "as_tensor",
    "backward",
    "grad",
    "no_grad",
    "enable_grad",
    "is_grad_enabled",
]

_local = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_local, "enabled", True)


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    prev = is_grad_enabled()
    _local.enabled = enabled
    try:
        yield
    finally:
        _local.enabled = prev


def no_grad():
    return _grad_mode(False)


def enable_grad():
    return _grad_mode(True)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op", "_consumed")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None
        self._op = None
        self._consumed = False

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return len(self.data)

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def sqrt(self):
        return sqrt(self)

    def tanh(self):
        return tanh(self)

    def backward(self):
        backward(self)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = as_tensor(b, like=a)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = as_tensor(a, like=b)
    return as_tensor(a), as_tensor(b)


def _make(data, parents, backward_fn, op) -> Tensor:
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    return out


# -- broadcasting helpers ---------------------------------------------------

def _reduce_to_shape(arr: np.ndarray, shape: tuple) -> np.ndarray:
    if arr.shape == shape:
        return arr
    lead = arr.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and arr.shape[i + lead] != 1
    )
    out = arr.sum(axis=axes, keepdims=True)
    return out.reshape(shape)


def sum_to(x: Tensor, shape: tuple) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x

    def bw(g):
        return (broadcast_to(g, x.shape),)

    return _make(_reduce_to_shape(x.data, shape), (x,), bw, "sum_to")


def broadcast_to(x: Tensor, shape: tuple) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x

    def bw(g):
        return (sum_to(g, x.shape),)

    return _make(np.broadcast_to(x.data, shape).copy(), (x,), bw, "broadcast_to")


# -- elementwise ----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return (sum_to(g, a.shape) if a.requires_grad else None,
                sum_to(g, b.shape) if b.requires_grad else None)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return (sum_to(g, a.shape) if a.requires_grad else None,
                sum_to(neg(g), b.shape) if b.requires_grad else None)

    return _make(a.data - b.data, (a, b), bw, "sub")


def neg(a: Tensor) -> Tensor:
    def bw(g):
        return (neg(g),)

    return _make(-a.data, (a,), bw, "neg")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return (sum_to(mul(g, b), a.shape) if a.requires_grad else None,
                sum_to(mul(g, a), b.shape) if b.requires_grad else None)

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        ga = sum_to(div(g, b), a.shape) if a.requires_grad else None
        gb = sum_to(neg(div(mul(g, out), b)), b.shape) if b.requires_grad else None
        return ga, gb

    out = _make(a.data / b.data, (a, b), bw, "div")
    return out


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)

    def bw(g):
        if p == 2.0:
            return (mul(g, mul(a, 2.0)),)
        return (mul(g, mul(power(a, p - 1.0), p)),)

    return _make(a.data ** p, (a,), bw, "pow")


def sqrt(a: Tensor) -> Tensor:
    def bw(g):
        # At sqrt(0) the chain rule multiplies by an upstream zero; keep it finite.
        guard = np.where(out.data == 0, np.finfo(out.dtype).tiny, 0).astype(out.dtype)
        return (div(g, add(mul(out, 2.0), Tensor(guard))),)

    out = _make(np.sqrt(a.data), (a,), bw, "sqrt")
    return out


def tanh(a: Tensor) -> Tensor:
    def bw(g):
        return (mul(g, sub(1.0, mul(out, out))),)

    out = _make(np.tanh(a.data), (a,), bw, "tanh")
    return out


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    # derivative at exactly 0 takes the positive-side slope
    scale = np.where(a.data >= 0, 1.0, slope).astype(a.dtype)

    def bw(g):
        return (mul(g, Tensor(scale)),)

    return _make(a.data * scale, (a,), bw, "leaky_relu")


def relu(a: Tensor) -> Tensor:
    return leaky_relu(a, 0.0)


# -- linear algebra and shape ---------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        return (matmul(g, transpose(b)) if a.requires_grad else None,
                matmul(transpose(a), g) if b.requires_grad else None)

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        return (transpose(g, inv),)

    return _make(a.data.transpose(axes), (a,), bw, "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ValueError(f"reshape: cannot reshape {a.shape} into {shape}") from exc

    def bw(g):
        return (reshape(g, a.shape),)

    return _make(data, (a,), bw, "reshape")


def flatten(a: Tensor) -> Tensor:
    """Collapse all but the batch axis."""
    return reshape(a, (a.shape[0], -1))


def unsqueeze(a: Tensor, axis: int) -> Tensor:
    return reshape(a, np.expand_dims(a.data, axis).shape)


def getitem(a: Tensor, key) -> Tensor:
    def bw(g):
        return (scatter(g, key, a.shape),)

    return _make(a.data[key], (a,), bw, "getitem")


def scatter(a: Tensor, key, shape) -> Tensor:
    """Place ``a`` at ``key`` inside a zero tensor of ``shape`` (basic slicing only)."""
    out = np.zeros(shape, dtype=a.dtype)
    out[key] = a.data

    def bw(g):
        return (getitem(g, key),)

    return _make(out, (a,), bw, "scatter")


def pad(a: Tensor, widths) -> Tensor:
    widths = tuple(tuple(w) for w in widths)
    shape = tuple(s + lo + hi for s, (lo, hi) in zip(a.shape, widths))
    key = tuple(slice(lo, lo + s) for s, (lo, _) in zip(a.shape, widths))
    return scatter(a, key, shape)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, tensors[0].shape)) if i != axis
        ):
            raise ValueError(f"concat: incompatible shapes {tensors[0].shape} and {t.shape} on axis {axis}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        grads = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if not t.requires_grad:
                grads.append(None)
                continue
            key = (slice(None),) * axis + (slice(int(lo), int(hi)),)
            grads.append(getitem(g, key))
        return tuple(grads)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        axes = tuple(range(a.ndim))
    elif isinstance(axis, int):
        axes = (axis % a.ndim,)
    else:
        axes = tuple(ax % a.ndim for ax in axis)
    kept = tuple(1 if i in axes else s for i, s in enumerate(a.shape))

    def bw(g):
        return (broadcast_to(reshape(g, kept), a.shape),)

    return _make(a.data.sum(axis=axes, keepdims=keepdims), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    s = sum_(a, axis, keepdims)
    return mul(s, s.size / a.size)


# -- graph traversal --------------------------------------------------------------

def _toposort(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _run_backward(output: Tensor, grad_output: Tensor, create_graph: bool) -> dict:
    order = _toposort(output)
    grads = {id(output): grad_output}
    with _grad_mode(create_graph):
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else add(prev, pg)
    return grads


def grad(output: Tensor, inputs, grad_output=None, create_graph: bool = False) -> list:
    """Return d(output)/d(input) for each input, leaving ``.grad`` untouched.

    With ``create_graph=True`` the returned tensors carry their own graph and
    can be differentiated again.  Inputs the output does not depend on get
    zero gradients.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    for t in inputs:
        if not t.requires_grad:
            raise ValueError("grad: input tensor does not track gradients")
    if grad_output is None:
        if output.size != 1:
            raise ValueError(f"grad: output must be scalar, got shape {output.shape}")
        grad_output = Tensor(np.ones_like(output.data))
    grads = _run_backward(output, as_tensor(grad_output), create_graph)
    result = []
    for t in inputs:
        g = grads.get(id(t))
        result.append(g if g is not None else Tensor(np.zeros_like(t.data)))
    return result


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("backward: graph already consumed; recompute the loss first")
    if not loss.requires_grad:
        raise RuntimeError("backward: loss does not depend on any tracked tensor")
    grads = _run_backward(loss, Tensor(np.ones_like(loss.data)), create_graph=False)
    for node in _toposort(loss):
        if node.is_leaf and node.requires_grad:
            g = grads.get(id(node))
            if g is None:
                continue
            node.grad = g.data.copy() if node.grad is None else node.grad + g.data
    loss._consumed = True
