import math
from dataclasses import replace

import numpy as np
import pytest

from molmamba.config import TrainConfig
from molmamba.errors import NumericError, ShapeError, ValidationError
from molmamba.model import MolMamba, featurize_corpus
from molmamba.tensor import Parameter, Tensor
from molmamba.training.losses import distribution_loss, total_loss
from molmamba.training.loop import CURVE_COLUMNS, finetune, pretrain, split_indices, task_data
from molmamba.training.metrics import mae, rmse, roc_auc
from molmamba.training.optim import AdamW, clip_grad_norm
from oracles import pair_count_auc


def _softmax(row):
    e = [math.exp(v) for v in row]
    s = sum(e)
    return [v / s for v in e]


def scalar_distribution_loss(a, b, tau):
    total = 0.0
    for ra, rb in zip(a, b):
        p, q = _softmax([tau * v for v in ra]), _softmax([tau * v for v in rb])
        total += -sum(pi * math.log(qi) for pi, qi in zip(p, q)) - sum(qi * math.log(pi) for pi, qi in zip(p, q))
    return total / len(a)


@pytest.mark.parametrize("d", [1, 4, 7])
def test_distribution_loss_uniform_anchor(d):
    rng = np.random.default_rng(d)
    a, b = Tensor(rng.normal(size=(3, d))), Tensor(rng.normal(size=(3, d)))
    assert abs(distribution_loss(a, b, 0.0).item() - 2 * math.log(d)) <= 1e-9
    const = Tensor(np.full((3, d), 2.5))
    assert abs(distribution_loss(const, const, 0.5).item() - 2 * math.log(d)) <= 1e-9


def test_distribution_loss_matches_scalar_oracle_and_is_symmetric():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    got = distribution_loss(Tensor(a), Tensor(b), 0.5).item()
    assert got == pytest.approx(scalar_distribution_loss(a, b, 0.5), rel=1e-12)
    assert got == pytest.approx(distribution_loss(Tensor(b), Tensor(a), 0.5).item(), rel=1e-14)
    with pytest.raises(ShapeError):
        distribution_loss(Tensor(a), Tensor(b[:, :3]), 0.5)


def test_total_loss_anchors():
    config = TrainConfig()
    ones = dict.fromkeys(("d", "s", "f", "mask"), 1.0)
    assert total_loss(ones, config) == pytest.approx(20.3, abs=1e-12)
    assert total_loss(dict.fromkeys(ones, 0.0), config) == 0.0
    doubled = config.replace(lambda_d=0.2, lambda_s=0.2, lambda_f=40.0, lambda_mask=0.2)
    assert total_loss(ones, doubled) == pytest.approx(2 * total_loss(ones, config), rel=1e-15)
    with pytest.raises(NumericError, match="'s'"):
        total_loss({"d": 1.0, "s": math.nan}, config)


def test_adamw_zero_lr_is_identity():
    p = Parameter(np.random.default_rng(0).normal(size=(3, 2)))
    before = p.data.copy()
    opt = AdamW([p], lr=0.0, weight_decay=0.5)
    p.grad = np.ones_like(p.data)
    opt.step()
    np.testing.assert_array_equal(p.data, before)


def test_adamw_first_step():
    p = Parameter(np.array([1.0, -2.0]))
    opt = AdamW([p], lr=0.1, weight_decay=0.0)
    p.grad = np.array([0.5, -3.0])
    opt.step()
    # bias-corrected first step moves each coordinate by lr against the sign of its gradient
    np.testing.assert_allclose(p.data, [0.9, -1.9], rtol=1e-7)


def test_clip_grad_norm():
    a, b = Parameter(np.zeros(2)), Parameter(np.zeros(1))
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    assert clip_grad_norm([a, b], 1.0) == 5.0
    np.testing.assert_allclose(np.concatenate([a.grad, b.grad]), [0.6, 0.0, 0.8])
    a.grad = np.array([np.inf, 0.0])
    with pytest.raises(NumericError):
        clip_grad_norm([a, b], 1.0)


def test_roc_auc():
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert roc_auc([1, 2, 3, 4], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    scores, labels = [0.2, 0.2, 0.9, 0.1, 0.5, 0.5], [1, 0, 1, 0, 0, 1]
    assert roc_auc(scores, labels) == pytest.approx(pair_count_auc(scores, labels), abs=1e-15)
    with pytest.raises(ValidationError):
        roc_auc([0.1, 0.2], [1, 1])


def test_roc_auc_random_against_pair_count():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(2, 40))
        scores = rng.integers(0, 5, size=n).astype(float)
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            continue
        assert roc_auc(scores, labels) == pytest.approx(pair_count_auc(scores, labels), abs=1e-12)


def test_rmse_mae():
    assert rmse([1.0, 2.0], [1.0, 4.0]) == pytest.approx(math.sqrt(2))
    assert mae([1.0, 2.0], [1.0, 4.0]) == 1.0
    with pytest.raises(ValidationError):
        rmse([1.0], [1.0, 2.0])


def test_split_indices():
    a = split_indices(50, (8, 1, 1), 3)
    b = split_indices(50, (8, 1, 1), 3)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert [len(x) for x in a] == [40, 5, 5]
    np.testing.assert_array_equal(np.sort(np.concatenate(a)), np.arange(50))
    with pytest.raises(ValidationError, match="validation"):
        split_indices(3, (8, 1, 1), 0)


def test_pretrain_deterministic_and_curves(corpus, vocab, tiny_config):
    feats = featurize_corpus(corpus[:12], vocab, tiny_config)
    first = pretrain(feats, vocab.size, tiny_config)
    second = pretrain(feats, vocab.size, tiny_config)
    assert first.curves == second.curves
    for name in first.best_state:
        np.testing.assert_array_equal(first.best_state[name], second.best_state[name])
    lines = first.curves_csv().splitlines()
    assert lines[0] == ",".join(CURVE_COLUMNS)
    assert len(lines) == 1 + tiny_config.epochs
    assert all(math.isfinite(v) for row in first.curves for v in row.values())


def test_pretrain_reports_numeric_failure(corpus, vocab, tiny_config):
    feats = featurize_corpus(corpus[:8], vocab, tiny_config)
    model = MolMamba(tiny_config, vocab.size)
    model.mg.frag_head.b.data = np.full_like(model.mg.frag_head.b.data, np.nan)
    with pytest.raises(NumericError, match="epoch 1 step 1"):
        pretrain(feats, vocab.size, tiny_config, model=model)


def test_constant_regression_target_is_learned(corpus, vocab, tiny_config):
    mols = [replace(m, labels={"c": 2.0}) for m in corpus[:10]]
    config = tiny_config.replace(epochs=40, lr=1e-2, split="8:2:0", patience=0, batch_size=8)
    feats = featurize_corpus(mols, vocab, config)
    report, _ = finetune(feats, "c", vocab.size, config)
    curve = report.curves["0"]["train_metric"]
    assert report.metric == "rmse"
    assert curve[-1] < 0.25 * curve[0]


def test_task_without_labels(corpus, vocab, tiny_config):
    feats = featurize_corpus(corpus[:4], vocab, tiny_config)
    with pytest.raises(ValidationError, match="missing"):
        task_data(feats, "missing")
    data = task_data(feats, "planted")
    assert data.classification and data.metric == "roc_auc"
