"""Fragment-graph GIN, atom-graph continuous-filter network and descriptor encoder."""

from __future__ import annotations

from typing import Callable

import numpy as np

from molmamba.errors import ValidationError
from molmamba.molgraph import N_DESCRIPTORS, SEGMENT_OF_ROW, SEGMENTS
from molmamba.tensor import MLP, Embedding, LayerNorm, Module, Parameter, Tensor
from molmamba.tensor import ops

N_ELEMENTS = 119


def gin_aggregate(h: Tensor, adjacency: np.ndarray, eps: Tensor) -> Tensor:
    """``(1 + eps) * h_i + sum_{j in N(i)} h_j`` for every node."""
    return h * (eps + 1.0) + Tensor(adjacency) @ h


class GINLayer(Module):
    def __init__(self, rng: np.random.Generator, width: int, mlp: Callable[[Tensor], Tensor] | None = None):
        self.eps = Parameter(np.zeros(1))
        self.mlp = mlp if mlp is not None else MLP(rng, width, width, width)

    def __call__(self, h: Tensor, adjacency: np.ndarray) -> Tensor:
        return self.mlp(gin_aggregate(h, adjacency, self.eps))


class FragmentGNN(Module):
    """Embeds fragment vocabulary ids, layer-normalizes, then runs GIN layers."""

    def __init__(self, rng: np.random.Generator, vocab_size: int, width: int = 64, depth: int = 6):
        self.embed = Embedding(rng, vocab_size, width)
        self.norm = LayerNorm(width)
        self.layers = [GINLayer(rng, width) for _ in range(depth)]

    def __call__(self, vocab_ids: np.ndarray, adjacency: np.ndarray) -> Tensor:
        vocab_ids = np.asarray(vocab_ids, dtype=np.int64)
        if vocab_ids.size and vocab_ids.max() >= self.embed.rows:
            raise ValidationError(
                f"fragment vocabulary id {int(vocab_ids.max())} exceeds embedding table of {self.embed.rows} rows"
            )
        h = self.norm(self.embed(vocab_ids))
        for layer in self.layers:
            h = layer(h, adjacency)
        return h


def rbf_expand(distances: np.ndarray, n_rbf: int = 16, cutoff: float = 8.0) -> np.ndarray:
    """Gaussian radial basis with centres evenly spaced on [0, cutoff]; width equals the spacing."""
    centers = np.linspace(0.0, cutoff, n_rbf)
    width = centers[1] - centers[0]
    diff = (np.asarray(distances, dtype=np.float64)[..., None] - centers) / width
    return np.exp(-(diff * diff))


class Interaction(Module):
    """Continuous-filter convolution with a residual update.

    The update network carries no biases, so an atom that receives no
    messages keeps its features unchanged.
    """

    def __init__(self, rng: np.random.Generator, width: int, n_rbf: int):
        self.filter = MLP(rng, n_rbf, width, width)
        self.update = MLP(rng, width, width, width, bias=False)

    def __call__(self, h: Tensor, src: np.ndarray, dst: np.ndarray, rbf: np.ndarray) -> Tensor:
        if src.size == 0:
            return h
        incidence = np.zeros((h.shape[0], src.size))
        incidence[dst, np.arange(src.size)] = 1.0
        messages = ops.gather(h, src) * self.filter(Tensor(rbf))
        return h + self.update(Tensor(incidence) @ messages)


class AtomGNN(Module):
    def __init__(
        self,
        rng: np.random.Generator,
        width: int = 64,
        depth: int = 6,
        n_rbf: int = 16,
        cutoff: float = 8.0,
    ):
        self.n_rbf = n_rbf
        self.cutoff = cutoff
        self.embed = Embedding(rng, N_ELEMENTS, width)
        self.norm = LayerNorm(width)
        self.layers = [Interaction(rng, width, n_rbf) for _ in range(depth)]

    def __call__(self, elements: np.ndarray, adjacency: np.ndarray, distance: np.ndarray) -> Tensor:
        elements = np.asarray(elements, dtype=np.int64)
        if elements.max() >= N_ELEMENTS:
            raise ValidationError(f"element number {int(elements.max())} outside the periodic table")
        dst, src = np.nonzero(adjacency)
        rbf = rbf_expand(distance[dst, src], self.n_rbf, self.cutoff)
        h = self.norm(self.embed(elements))
        for layer in self.layers:
            h = layer(h, src, dst, rbf)
        return h


def descriptor_inputs(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Per-row encoder input: (raw, normalized, mask flag, 4-way segment one-hot).

    Raw values are log-compressed with ``sign(x) * log1p(|x|)``; masked rows
    have both value channels zeroed.
    """
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if values.shape != (N_DESCRIPTORS, 2) or mask.shape != (N_DESCRIPTORS,):
        raise ValidationError(f"descriptor input must be ({N_DESCRIPTORS}, 2) with a {N_DESCRIPTORS}-row mask")
    raw = np.sign(values[:, 0]) * np.log1p(np.abs(values[:, 0]))
    feats = np.zeros((N_DESCRIPTORS, 3 + len(SEGMENTS)))
    feats[:, 0] = np.where(mask, 0.0, raw)
    feats[:, 1] = np.where(mask, 0.0, values[:, 1])
    feats[:, 2] = mask
    feats[np.arange(N_DESCRIPTORS), 3 + SEGMENT_OF_ROW] = 1.0
    return feats


class DescriptorEncoder(Module):
    def __init__(self, rng: np.random.Generator, width: int = 64):
        self.mlp = MLP(rng, 3 + len(SEGMENTS), width, width)

    def __call__(self, values: np.ndarray, mask: np.ndarray) -> Tensor:
        return self.mlp(Tensor(descriptor_inputs(values, mask)))
