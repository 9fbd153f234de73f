"""Pretraining objectives."""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from molmamba.config import TrainConfig
from molmamba.errors import NumericError, ShapeError
from molmamba.tensor import Tensor
from molmamba.tensor import ops

LOSS_TERMS = ("d", "s", "f", "mask")


def distribution_loss(frag_feats: Tensor, pooled: Tensor, tau: float) -> Tensor:
    """Symmetric cross-entropy between feature-axis softmaxes of two fragment views.

    Each direction treats the other view's distribution as a fixed
    pseudo-label, so gradients only reach the predicting side.  Averaged
    over fragments.
    """
    if frag_feats.shape != pooled.shape:
        raise ShapeError(f"distribution_loss: shapes {frag_feats.shape} and {pooled.shape}")
    log_p = ops.log_softmax(frag_feats * tau, axis=1)
    log_q = ops.log_softmax(pooled * tau, axis=1)
    p = np.exp(log_p.data)
    q = np.exp(log_q.data)
    per_fragment = -(log_q * p).sum(axis=1) - (log_p * q).sum(axis=1)
    return per_fragment.mean()


def total_loss(components: Mapping[str, Tensor | float], config: TrainConfig):
    """Weighted sum of the loss terms present in ``components``."""
    weights = {"d": config.lambda_d, "s": config.lambda_s, "f": config.lambda_f, "mask": config.lambda_mask}
    total = 0.0
    for name, value in components.items():
        if name not in weights:
            raise KeyError(f"unknown loss term {name!r}")
        scalar = value.item() if isinstance(value, Tensor) else float(value)
        if not math.isfinite(scalar):
            raise NumericError(f"loss term {name!r} is not finite ({scalar})")
        total = value * weights[name] + total
    return total
