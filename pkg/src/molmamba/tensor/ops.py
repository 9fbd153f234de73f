"""Differentiable functions used by the model modules.

All functions take and return :class:`~molmamba.tensor.core.Tensor` and
compute exact analytic gradients.  Row-wise ops operate on the last axis
unless an ``axis`` argument says otherwise.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import expit, logsumexp

from molmamba.errors import ShapeError, ValidationError
from molmamba.tensor._scan import scan_backward as _scan_backward
from molmamba.tensor._scan import scan_forward as _scan_forward
from molmamba.tensor.core import Tensor, _result, as_tensor


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return np.split(g, bounds, axis=axis)

    return _result(out, tuple(tensors), backward, "concat")


def gather(x: Tensor, index) -> Tensor:
    """Rows of ``x`` selected by an integer index array (repeats allowed)."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ShapeError(f"gather: index out of range for {x.shape[0]} rows")
    return x[index]


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` for 2-D ``x`` as a single tape node."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"linear: incompatible shapes {x.shape} and {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd
    if bias is not None:
        if bias.shape != (wd.shape[1],):
            raise ShapeError(f"linear: bias {bias.shape} for output width {wd.shape[1]}")
        out = out + bias.data
    need_x = x.requires_grad

    def backward(g):
        gx = g @ wd.T if need_x else None
        return (gx, xd.T @ g) if bias is None else (gx, xd.T @ g, g.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward, "linear")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    a = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a)
    return _result(out, (x,), lambda g: (g / a,), "log")


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    return _result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def softplus(x: Tensor) -> Tensor:
    a = x.data
    return _result(np.logaddexp(0.0, a), (x,), lambda g: (g * expit(a),), "softplus")


def silu(x: Tensor) -> Tensor:
    a = x.data
    s = expit(a)
    return _result(a * s, (x,), lambda g: (g * s * (1.0 + a * (1.0 - s)),), "silu")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_axis("softmax", x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _result(s, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_axis("log_softmax", x, axis)
    out = x.data - logsumexp(x.data, axis=axis, keepdims=True)

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), backward, "log_softmax")


def layernorm(x: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean and unit variance along ``axis`` (no affine)."""
    _check_axis("layernorm", x, axis)
    a = x.data
    mu = a.mean(axis=axis, keepdims=True)
    centered = a - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=axis, keepdims=True) + eps)
    xhat = centered * inv_std

    def backward(g):
        g_mean = g.mean(axis=axis, keepdims=True)
        gx_mean = (g * xhat).mean(axis=axis, keepdims=True)
        return (inv_std * (g - g_mean - xhat * gx_mean),)

    return _result(xhat, (x,), backward, "layernorm")


def conv1d_causal(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Depthwise causal convolution over the sequence axis.

    ``x`` is (L, C), ``weight`` is (C, K) and ``bias`` is (C,).  The sequence
    is left-padded with K-1 zeros, so output t only sees inputs t-K+1..t;
    ``weight[:, K-1]`` multiplies the current position.
    """
    if x.ndim != 2 or weight.ndim != 2 or weight.shape[0] != x.shape[1] or bias.shape != (x.shape[1],):
        raise ShapeError(f"conv1d: incompatible shapes x={x.shape} w={weight.shape} b={bias.shape}")
    length = x.shape[0]
    k = weight.shape[1]
    w = weight.data
    padded = np.concatenate([np.zeros((k - 1, x.shape[1])), x.data], axis=0)
    out = np.broadcast_to(bias.data, x.shape).copy()
    for j in range(k):
        out += padded[j : j + length] * w[:, j]

    def backward(g):
        g_padded = np.zeros_like(padded)
        g_w = np.empty_like(w)
        for j in range(k):
            g_padded[j : j + length] += g * w[:, j]
            g_w[:, j] = (g * padded[j : j + length]).sum(axis=0)
        return g_padded[k - 1 :], g_w, g.sum(axis=0)

    return _result(out, (x, weight, bias), backward, "conv1d")


def segment_max(x: Tensor, segments, num_segments: int) -> Tensor:
    """Column-wise max of the rows of ``x`` that share a segment id."""
    segments = np.asarray(segments, dtype=np.int64)
    if x.ndim != 2 or segments.shape != (x.shape[0],):
        raise ShapeError(f"segment_max: x={x.shape} segments={segments.shape}")
    cols = np.arange(x.shape[1])
    winners = np.empty((num_segments, x.shape[1]), dtype=np.int64)
    for s in range(num_segments):
        rows = np.flatnonzero(segments == s)
        if rows.size == 0:
            raise ValidationError(f"segment_max: segment {s} is empty")
        winners[s] = rows[x.data[rows].argmax(axis=0)]
    out = x.data[winners, cols]
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, (winners, cols), g)
        return (full,)

    return _result(out, (x,), backward, "segment_max")


def selective_scan(x: Tensor, delta: Tensor, a: Tensor, b: Tensor, c: Tensor) -> Tensor:
    """Selective state-space recurrence with per-element discretization.

    Shapes: ``x`` and ``delta`` (L, D), ``a`` (D, N), ``b`` and ``c`` (L, N).
    With ``abar[t] = exp(delta[t, :, None] * a)`` and
    ``bx[t] = delta[t, :, None] * b[t, None, :] * x[t, :, None]`` the state
    evolves as ``h[t] = abar[t] * h[t-1] + bx[t]`` from ``h[-1] = 0`` and the
    output is ``y[t, d] = sum_n c[t, n] * h[t, d, n]``.
    """
    length, width = x.shape
    n_state = a.shape[1]
    if (
        delta.shape != x.shape
        or a.shape != (width, n_state)
        or b.shape != (length, n_state)
        or c.shape != (length, n_state)
    ):
        raise ShapeError(
            f"selective_scan: x={x.shape} delta={delta.shape} A={a.shape} B={b.shape} C={c.shape}"
        )
    xd, dd, ad, bd, cd = x.data, delta.data, a.data, b.data, c.data
    y, states = _scan_forward(xd, dd, ad, bd, cd)

    def backward(g):
        return _scan_backward(np.ascontiguousarray(g), xd, dd, ad, bd, cd, states)

    return _result(y, (x, delta, a, b, c), backward, "selective_scan")


def mse(pred: Tensor, target) -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: shapes {pred.shape} and {target.shape}")
    diff = pred - target
    return (diff * diff).mean()


def binary_cross_entropy_with_logits(logits: Tensor, targets, weights=None) -> Tensor:
    """Weighted mean of elementwise logistic losses; weights of 0 skip entries."""
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.shape:
        raise ShapeError(f"binary_cross_entropy_with_logits: shapes {logits.shape} and {t.shape}")
    w = np.ones_like(t) if weights is None else np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if total <= 0:
        raise ValidationError("binary_cross_entropy_with_logits: no entries carry weight")
    z = logits.data
    elementwise = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = np.asarray((w * elementwise).sum() / total)

    def backward(g):
        return (g * w * (expit(z) - t) / total,)

    return _result(out, (logits,), backward, "binary_cross_entropy_with_logits")


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean over rows of ``-sum(target * log_softmax(logits))``.

    ``targets`` is either an integer class index per row or a constant
    distribution per row with the same shape as ``logits``.
    """
    targets = np.asarray(targets)
    if targets.ndim == 1 and logits.ndim == 2 and targets.shape[0] == logits.shape[0]:
        onehot = np.zeros(logits.shape)
        onehot[np.arange(len(targets)), targets.astype(np.int64)] = 1.0
        targets = onehot
    if targets.shape != logits.shape:
        raise ShapeError(f"cross_entropy: logits {logits.shape}, targets {targets.shape}")
    return -(log_softmax(logits, axis=-1) * targets).sum(axis=-1).mean()


def _check_axis(op: str, x: Tensor, axis: int) -> None:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"{op}: axis {axis} invalid for shape {x.shape}")
