"""Independent reference implementations used as test oracles."""

from __future__ import annotations

import itertools
import math

import numpy as np

from molmamba.tensor import Tensor


def finite_difference(fn, arrays, eps=1e-5):
    """Central differences of the scalar ``fn(*arrays)`` w.r.t. every array entry."""
    grads = []
    for k, base in enumerate(arrays):
        grad = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            up = [a.copy() for a in arrays]
            down = [a.copy() for a in arrays]
            up[k][idx] += eps
            down[k][idx] -= eps
            grad[idx] = (fn(*up) - fn(*down)) / (2 * eps)
        grads.append(grad)
    return grads


def relative_error(analytic, numeric) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
    return float(np.linalg.norm(analytic - numeric) / scale)


def gradcheck(op, arrays, eps=1e-5, seed=0):
    """Relative error (over all inputs jointly) between tape gradients and finite differences of ``sum(op(*xs) * r)``."""
    rng = np.random.default_rng(seed)
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*tensors)
    weights = rng.normal(size=out.shape)
    (out * Tensor(weights)).sum().backward()

    def scalar(*xs):
        return float((op(*[Tensor(x) for x in xs]).data * weights).sum())

    numeric = finite_difference(scalar, [a.copy() for a in arrays], eps)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad for t in tensors]
    return relative_error(
        np.concatenate([g.ravel() for g in analytic]), np.concatenate([n.ravel() for n in numeric])
    )


def naive_scan(x, delta, a, b, c):
    """Plain triple loop over the selective-scan recurrence."""
    length, width = x.shape
    n_state = a.shape[1]
    h = [[0.0] * n_state for _ in range(width)]
    y = np.zeros((length, width))
    for t in range(length):
        for d in range(width):
            total = 0.0
            for n in range(n_state):
                h[d][n] = math.exp(delta[t, d] * a[d, n]) * h[d][n] + delta[t, d] * b[t, n] * x[t, d]
                total += c[t, n] * h[d][n]
            y[t, d] = total
    return y


def all_pairs_hops(n_nodes, edges):
    """Floyd-Warshall hop distances."""
    dist = np.full((n_nodes, n_nodes), np.inf)
    np.fill_diagonal(dist, 0)
    for i, j in edges:
        dist[i, j] = dist[j, i] = 1
    for k in range(n_nodes):
        dist = np.minimum(dist, dist[:, [k]] + dist[[k], :])
    return dist


def pair_count_auc(scores, labels) -> float:
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p, q in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))
