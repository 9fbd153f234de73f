"""Evaluation metrics."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from molmamba.errors import ValidationError


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative; ties count half."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if scores.shape != labels.shape:
        raise ValidationError(f"roc_auc: {scores.size} scores for {labels.size} labels")
    positive = labels > 0.5
    n_pos = int(positive.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("roc_auc needs at least one positive and one negative label")
    ranks = rankdata(scores)  # average ranks implement the half-credit for ties
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def rmse(pred, y) -> float:
    diff = _paired(pred, y, "rmse")
    return float(np.sqrt(np.mean(diff * diff)))


def mae(pred, y) -> float:
    return float(np.mean(np.abs(_paired(pred, y, "mae"))))


def _paired(pred, y, name: str) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if pred.shape != y.shape or pred.size == 0:
        raise ValidationError(f"{name}: need equal non-empty arrays, got {pred.size} and {y.size}")
    return pred - y
