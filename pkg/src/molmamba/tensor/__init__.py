"""Float64 tensors with reverse-mode automatic differentiation."""

from molmamba.tensor.core import Parameter, Tensor, as_tensor, is_grad_enabled, no_grad
from molmamba.tensor.nn import MLP, Embedding, LayerNorm, Linear, Module, fan_in_uniform, seeded_rng

__all__ = [
    "MLP",
    "Embedding",
    "LayerNorm",
    "Linear",
    "Module",
    "Parameter",
    "Tensor",
    "as_tensor",
    "fan_in_uniform",
    "is_grad_enabled",
    "no_grad",
    "seeded_rng",
]
