"""Pretraining and fine-tuning loops, dataset splitting and metric reports."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from molmamba.config import TrainConfig
from molmamba.errors import NumericError, ValidationError
from molmamba.fuser import make_mask
from molmamba.model import MolFeatures, MolMamba
from molmamba.molgraph import N_DESCRIPTORS
from molmamba.tensor import no_grad, seeded_rng
from molmamba.tensor import ops
from molmamba.training.losses import LOSS_TERMS, total_loss
from molmamba.training.metrics import mae, rmse, roc_auc
from molmamba.training.optim import AdamW, clip_grad_norm

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("epoch", "loss_d", "loss_s", "loss_f", "loss_mask", "total")
VALIDATION_MASK_SEED = 104729


def split_indices(n: int, parts: tuple[int, int, int], seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded shuffle of ``range(n)`` cut into train/validation/test by ``parts`` tenths."""
    order = seeded_rng(seed).permutation(n)
    n_train = int(round(n * parts[0] / 10))
    n_val = int(round(n * parts[1] / 10))
    pieces = order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]
    for name, piece, part in zip(("train", "validation", "test"), pieces, parts):
        if part > 0 and piece.size == 0:
            raise ValidationError(f"{name} split is empty for {n} molecules at ratio {parts}")
    return pieces


def batches(indices: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    shuffled = indices[rng.permutation(len(indices))]
    return [shuffled[k : k + batch_size] for k in range(0, len(shuffled), batch_size)]


def make_optimizer(model: MolMamba, config: TrainConfig) -> AdamW:
    return AdamW(
        model.parameters(),
        lr=config.lr,
        betas=(config.beta1, config.beta2),
        eps=config.adam_eps,
        weight_decay=config.weight_decay,
    )


# ----------------------------------------------------------------- pretraining
@dataclass
class PretrainResult:
    """Per-epoch training curves, validation totals and the best-validation weights."""

    curves: list[dict]
    val_totals: list[float]
    best_epoch: int
    best_state: dict[str, np.ndarray]

    def curves_csv(self) -> str:
        lines = [",".join(CURVE_COLUMNS)]
        for row in self.curves:
            lines.append(",".join([str(row["epoch"])] + [repr(row[c]) for c in CURVE_COLUMNS[1:]]))
        return "\n".join(lines) + "\n"


def _validation_total(model: MolMamba, features: Sequence[MolFeatures], config: TrainConfig) -> float:
    """All four terms on fixed masks, so totals compare across both stages."""
    rng = seeded_rng(VALIDATION_MASK_SEED)
    totals = []
    with no_grad():
        for feat in features:
            mask = make_mask(config.alpha, N_DESCRIPTORS, rng).mask
            totals.append(total_loss(model.pretrain_losses(feat, config.tau, mask), config).item())
    return float(np.mean(totals))


def pretrain(
    features: Sequence[MolFeatures],
    vocab_size: int,
    config: TrainConfig,
    model: MolMamba | None = None,
    progress: Callable[[dict], None] | None = None,
) -> PretrainResult:
    """Two-stage pretraining.

    Stage 1 optimizes the structure terms; stage 2 adds the masked-descriptor
    term and starts from fresh optimizer moments.  Every term is evaluated in
    both stages, so the logged curves cover the masked loss from epoch 1.
    """
    if not features:
        raise ValidationError("pretraining corpus is empty")
    train_idx, val_idx, _ = split_indices(len(features), config.split_parts(), config.seed)
    if val_idx.size == 0:
        val_idx = train_idx
    model = model or MolMamba(config, vocab_size)
    optimizer = make_optimizer(model, config)
    params = optimizer.params
    rng = seeded_rng(config.seed + 1)
    val_feats = [features[i] for i in val_idx]

    curves, val_totals = [], []
    best_epoch, best_val, best_state = 0, math.inf, model.state_dict()
    for epoch in range(1, config.epochs + 1):
        stage = 1 if epoch <= config.stage1 else 2
        if stage == 2 and epoch == config.stage1 + 1:
            optimizer.reset()
        sums = dict.fromkeys(LOSS_TERMS, 0.0)
        sums["total"] = 0.0
        for step, batch in enumerate(batches(train_idx, config.batch_size, rng), start=1):
            optimizer.zero_grad()
            try:
                for i in batch:
                    mask = make_mask(config.alpha, N_DESCRIPTORS, rng).mask
                    losses = model.pretrain_losses(features[i], config.tau, mask)
                    active = losses if stage == 2 else {k: v for k, v in losses.items() if k != "mask"}
                    total = total_loss(active, config)
                    (total * (1.0 / len(batch))).backward()
                    for name, value in losses.items():
                        sums[name] += value.item()
                    sums["total"] += total.item()
                clip_grad_norm(params, config.grad_clip)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} step {step}: {exc}") from exc
            optimizer.step()
        n = len(train_idx)
        row = {"epoch": epoch, **{f"loss_{k}": sums[k] / n for k in LOSS_TERMS}, "total": sums["total"] / n}
        curves.append(row)
        val_total = _validation_total(model, val_feats, config)
        val_totals.append(val_total)
        if val_total < best_val:
            best_epoch, best_val, best_state = epoch, val_total, model.state_dict()
        log.info("pretrain epoch %d stage %d total %.5f val %.5f", epoch, stage, row["total"], val_total)
        if progress is not None:
            progress({**row, "stage": stage, "val_total": val_total})
    return PretrainResult(curves, val_totals, best_epoch, best_state)


# ----------------------------------------------------------------- fine-tuning
@dataclass
class TaskData:
    """Targets for one label column; ``weights`` is 0 where the label is missing."""

    name: str
    targets: np.ndarray
    weights: np.ndarray
    classification: bool

    @property
    def metric(self) -> str:
        return "roc_auc" if self.classification else "rmse"


def task_data(features: Sequence[MolFeatures], task: str) -> TaskData:
    targets = np.zeros(len(features))
    weights = np.zeros(len(features))
    for k, feat in enumerate(features):
        value = feat.labels.get(task)
        if value is not None and math.isfinite(value):
            targets[k], weights[k] = value, 1.0
    if weights.sum() == 0:
        raise ValidationError(f"no molecule carries label {task!r}")
    present = targets[weights > 0]
    classification = bool(np.all((present == 0.0) | (present == 1.0)))
    return TaskData(task, targets, weights, classification)


@dataclass
class MetricsReport:
    task: str
    metric: str
    folds: list[dict]
    curves: dict = field(default_factory=dict)

    def _defined(self) -> list[float]:
        return [f["test"] for f in self.folds if f["test"] is not None]

    @property
    def mean(self) -> float | None:
        """Mean test metric over folds where it is defined; None when no fold is."""
        values = self._defined()
        return float(np.mean(values)) if values else None

    @property
    def std(self) -> float | None:
        values = self._defined()
        return float(np.std(values)) if values else None

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "metric": self.metric,
            "folds": self.folds,
            "mean": self.mean,
            "std": self.std,
            "curves": self.curves,
        }


def _task_loss(model: MolMamba, feat: MolFeatures, target: float, classification: bool):
    pred = model.predict(feat)
    t = np.array([target])
    return ops.binary_cross_entropy_with_logits(pred, t) if classification else ops.mse(pred, t)


def predict_scores(model: MolMamba, features: Sequence[MolFeatures]) -> np.ndarray:
    with no_grad():
        return np.array([model.predict(feat).data[0] for feat in features])


def score(data: TaskData, idx: np.ndarray, predictions: np.ndarray) -> dict:
    """Metric plus mean loss on the labelled subset of ``idx``; the metric is None when undefined."""
    keep = idx[data.weights[idx] > 0]
    if keep.size == 0:
        raise ValidationError(f"split has no labelled molecules for {data.name!r}")
    y, p = data.targets[keep], predictions[keep]
    if data.classification:
        loss = float(np.mean(np.maximum(p, 0) - p * y + np.log1p(np.exp(-np.abs(p)))))
        try:
            value = roc_auc(p, y)
        except ValidationError:
            value = None
        return {"metric": value, "loss": loss}
    return {"metric": rmse(p, y), "mae": mae(p, y), "loss": float(np.mean((p - y) ** 2))}


def _improved(data: TaskData, current: dict, best: dict | None) -> bool:
    """Higher ROC-AUC or lower RMSE; falls back to loss when the split's ROC-AUC is undefined."""
    if best is None:
        return True
    if data.classification:
        if current["metric"] is None or best["metric"] is None:
            return current["loss"] < best["loss"]
        if current["metric"] != best["metric"]:
            return current["metric"] > best["metric"]
        return current["loss"] < best["loss"]
    return current["metric"] < best["metric"]


def finetune_fold(
    features: Sequence[MolFeatures],
    data: TaskData,
    vocab_size: int,
    config: TrainConfig,
    fold_seed: int,
    state: dict[str, np.ndarray] | None = None,
    progress: Callable[[dict], None] | None = None,
) -> tuple[dict, dict, MolMamba]:
    """Train one split end to end; returns (fold summary, curves, best model)."""
    fold_config = config.replace(seed=fold_seed)
    train_idx, val_idx, test_idx = split_indices(len(features), config.split_parts(), fold_seed)
    model = MolMamba(fold_config, vocab_size, n_tasks=1)
    if state is not None:
        missing = model.load_state_dict(state, strict=False)
        stray = [name for name in missing if not name.startswith("head.")]
        if stray:
            raise ValidationError(f"checkpoint lacks encoder parameters {stray[:5]}")
    optimizer = make_optimizer(model, config)
    rng = seeded_rng(fold_seed + 1)
    labelled = train_idx[data.weights[train_idx] > 0]
    if labelled.size == 0:
        raise ValidationError(f"training split has no labelled molecules for {data.name!r}")
    eval_idx = val_idx if val_idx.size else train_idx

    curves = {"train_loss": [], "train_metric": [], "val_metric": []}
    best, best_epoch, best_state, waited = None, 0, model.state_dict(), 0
    for epoch in range(1, config.epochs + 1):
        loss_sum = 0.0
        for step, batch in enumerate(batches(labelled, config.batch_size, rng), start=1):
            optimizer.zero_grad()
            try:
                for i in batch:
                    loss = _task_loss(model, features[i], data.targets[i], data.classification)
                    if not math.isfinite(loss.item()):
                        raise NumericError("task loss is not finite")
                    (loss * (1.0 / len(batch))).backward()
                    loss_sum += loss.item()
                clip_grad_norm(optimizer.params, config.grad_clip)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} step {step}: {exc}") from exc
            optimizer.step()
        scored = np.unique(np.concatenate([labelled, eval_idx]))
        predictions = np.zeros(len(features))
        predictions[scored] = predict_scores(model, [features[i] for i in scored])
        train = score(data, labelled, predictions)
        val = score(data, eval_idx, predictions)
        curves["train_loss"].append(loss_sum / labelled.size)
        curves["train_metric"].append(train["metric"])
        curves["val_metric"].append(val["metric"])
        if progress is not None:
            progress({"epoch": epoch, "train": train, "val": val})
        if _improved(data, val, best):
            best, best_epoch, best_state, waited = val, epoch, model.state_dict(), 0
        else:
            waited += 1
            if config.patience > 0 and waited >= config.patience:
                log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break
    model.load_state_dict(best_state)
    test_scores = predict_scores(model, [features[i] for i in test_idx]) if test_idx.size else np.array([])
    predictions = np.zeros(len(features))
    predictions[test_idx] = test_scores
    test = score(data, test_idx, predictions) if test_idx.size else {"metric": None}
    summary = {
        "seed": fold_seed,
        "best_epoch": best_epoch,
        "val": best["metric"] if best else None,
        "test": test["metric"],
        "sizes": [int(train_idx.size), int(val_idx.size), int(test_idx.size)],
    }
    return summary, curves, model


def finetune(
    features: Sequence[MolFeatures],
    task: str,
    vocab_size: int,
    config: TrainConfig,
    state: dict[str, np.ndarray] | None = None,
    folds: int = 1,
    progress: Callable[[dict], None] | None = None,
) -> tuple[MetricsReport, list[MolMamba]]:
    """Fine-tune on ``task`` for ``folds`` seeded splits; fold ``k`` uses seed ``config.seed + k``."""
    if folds < 1:
        raise ValidationError("folds must be >= 1")
    data = task_data(features, task)
    fold_reports, curves, models = [], {}, []
    for k in range(folds):
        summary, fold_curves, model = finetune_fold(
            features, data, vocab_size, config, config.seed + k, state, progress
        )
        if summary["test"] is None and summary["sizes"][2]:
            log.warning("fold %d: test split has a single class, ROC-AUC undefined", k)
        fold_reports.append(summary)
        curves[str(k)] = fold_curves
        models.append(model)
    return MetricsReport(task, data.metric, fold_reports, curves), models


def evaluate(model: MolMamba, features: Sequence[MolFeatures], task: str) -> dict:
    """Metric of a fine-tuned model on every labelled molecule of ``features``."""
    data = task_data(features, task)
    idx = np.arange(len(features))
    result = score(data, idx, predict_scores(model, features))
    if result["metric"] is None:
        raise ValidationError(f"labels for {task!r} have a single class, ROC-AUC undefined")
    return {"task": task, "metric": data.metric, "value": result["metric"], **{k: v for k, v in result.items() if k != "metric"}}
