from . import functional
from .conv import conv2d_input_grad, conv2d_weight_grad
from .module import (
    BatchNorm,
    Conv1d,
    Conv2d,
    ConvTranspose1d,
    Linear,
    Module,
    Parameter,
    load_tensors,
    save_tensors,
)
from .tensor import Tensor, as_tensor, backward, enable_grad, grad, is_grad_enabled, no_grad


def grad_wrt_input(score: Tensor, x: Tensor, create_graph: bool = True) -> Tensor:
    """Gradient of a scalar (or batch-summed) score with respect to input ``x``."""
    if not x.requires_grad:
        raise ValueError("grad_wrt_input: input is not tracked; create it with requires_grad=True")
    if score.size != 1:
        score = score.sum()
    return grad(score, [x], create_graph=create_graph)[0]


__all__ = [
    "Tensor",
    "Parameter",
    "Module",
    "Linear",
    "Conv1d",
    "Conv2d",
    "ConvTranspose1d",
    "BatchNorm",
    "as_tensor",
    "backward",
    "grad",
    "grad_wrt_input",
    "no_grad",
    "enable_grad",
    "is_grad_enabled",
    "functional",
    "conv2d_input_grad",
    "conv2d_weight_grad",
    "save_tensors",
    "load_tensors",
]
