"""Descriptor masking, the Mamba-Transformer fuser and its output heads."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from molmamba.errors import ShapeError, ValidationError
from molmamba.gssm import MambaBlock
from molmamba.tensor import MLP, LayerNorm, Linear, Module, Tensor
from molmamba.tensor import ops


@dataclass(frozen=True)
class MaskPlan:
    mask: np.ndarray
    alpha: float

    @property
    def n_masked(self) -> int:
        return int(self.mask.sum())


def mask_count(alpha: float, m: int) -> int:
    return int(math.floor(alpha * m / 100.0 + 0.5))


def make_mask(alpha: float, m: int, rng: np.random.Generator) -> MaskPlan:
    """Mask exactly ``round(alpha% of m)`` rows chosen uniformly without replacement."""
    k = mask_count(alpha, m)
    if not 1 <= k <= m:
        raise ValidationError(f"mask ratio {alpha}% of {m} rows masks {k} rows; need 1..{m}")
    mask = np.zeros(m, dtype=bool)
    mask[rng.choice(m, size=k, replace=False)] = True
    return MaskPlan(mask, alpha)


class SelfAttention(Module):
    """Full multi-head self-attention; the last attention matrix is kept in ``weights``."""

    def __init__(self, rng: np.random.Generator, width: int, heads: int = 4):
        if width % heads:
            raise ShapeError(f"attention width {width} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(rng, width, width)
        self.k = Linear(rng, width, width)
        self.v = Linear(rng, width, width)
        self.o = Linear(rng, width, width)
        self.weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        length, width = x.shape
        return x.reshape(length, self.heads, width // self.heads).transpose(1, 0, 2)

    def attention(self, x: Tensor) -> Tensor:
        q, k = self._split(self.q(x)), self._split(self.k(x))
        scale = 1.0 / math.sqrt(q.shape[-1])
        return ops.softmax((q @ k.transpose(0, 2, 1)) * scale, axis=-1)

    def __call__(self, x: Tensor) -> Tensor:
        length, width = x.shape
        weights = self.attention(x)
        self.weights = weights.data
        mixed = (weights @ self._split(self.v(x))).transpose(1, 0, 2).reshape(length, width)
        return self.o(mixed)


class MTBlock(Module):
    """Pre-norm Mamba, attention and feed-forward sublayers, each with a residual."""

    def __init__(self, rng: np.random.Generator, width: int, inner: int, state_size: int, heads: int, kernel: int = 4):
        self.norm_ssm = LayerNorm(width)
        self.mamba = MambaBlock(rng, width, inner, state_size, kernel, residual=False)
        self.norm_attn = LayerNorm(width)
        self.attn = SelfAttention(rng, width, heads)
        self.norm_ffn = LayerNorm(width)
        self.ffn = MLP(rng, width, 4 * width, width)

    def __call__(self, u: Tensor) -> Tensor:
        u = u + self.mamba(self.norm_ssm(u))
        u = u + self.attn(self.norm_attn(u))
        return u + self.ffn(self.norm_ffn(u))


class MTFuser(Module):
    def __init__(
        self, rng: np.random.Generator, width: int = 64, inner: int = 128, state_size: int = 16, heads: int = 4,
        depth: int = 2, kernel: int = 4,
    ):
        self.blocks = [MTBlock(rng, width, inner, state_size, heads, kernel) for _ in range(depth)]

    def __call__(self, *parts: Tensor) -> Tensor:
        """Fuse token blocks given in order; descriptor tokens come first."""
        u = ops.concat([p for p in parts if p.shape[0] > 0] or parts[:1], axis=0)
        for block in self.blocks:
            u = block(u)
        return u


def mask_loss(reconstruction: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean over masked rows of the per-row mean squared error."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.sum() < 1:
        raise ValidationError("mask loss needs at least one masked row")
    if reconstruction.shape != np.shape(target) or mask.shape != (reconstruction.shape[0],):
        raise ShapeError(f"mask loss: reconstruction {reconstruction.shape}, target {np.shape(target)}, mask {mask.shape}")
    diff = reconstruction - Tensor(target)
    row_error = (diff * diff).mean(axis=1)
    return (row_error * Tensor(mask)).sum() * (1.0 / mask.sum())


class PredictionHead(Module):
    """Mean-pool all fused rows, then linear -> silu -> linear to one output per task."""

    def __init__(self, rng: np.random.Generator, width: int, n_tasks: int):
        self.mlp = MLP(rng, width, width, n_tasks)

    def __call__(self, fused: Tensor) -> Tensor:
        return self.mlp(fused.mean(axis=0, keepdims=True)).reshape(-1)
