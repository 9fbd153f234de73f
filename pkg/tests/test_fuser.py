import numpy as np
import pytest
from scipy.special import expit

from molmamba.errors import ValidationError
from molmamba.fuser import MTFuser, PredictionHead, SelfAttention, make_mask, mask_count, mask_loss
from molmamba.tensor import Tensor, seeded_rng


def test_mask_counts():
    assert mask_count(10, 112) == 11
    assert make_mask(10, 112, seeded_rng(0)).n_masked == 11
    assert make_mask(100, 112, seeded_rng(0)).mask.all()
    with pytest.raises(ValidationError):
        make_mask(0.1, 112, seeded_rng(0))


def test_mask_frequency():
    rng = seeded_rng(1)
    hits = np.zeros(112)
    for _ in range(10_000):
        hits += make_mask(10, 112, rng).mask
    assert np.abs(hits / 10_000 - 11 / 112).max() <= 0.01


def _zero(linear):
    linear.w.data = np.zeros_like(linear.w.data)
    if linear.b is not None:
        linear.b.data = np.zeros_like(linear.b.data)


def test_mt_residual_identity():
    fuser = MTFuser(seeded_rng(2), width=8, inner=16, state_size=4, heads=2, depth=2)
    for block in fuser.blocks:
        _zero(block.mamba.out)
        _zero(block.attn.o)
        _zero(block.ffn.fc2)
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(5, 8)), rng.normal(size=(3, 8))
    np.testing.assert_array_equal(fuser(Tensor(a), Tensor(b)).data, np.concatenate([a, b]))


def test_mt_descriptor_only_and_deterministic():
    fuser = MTFuser(seeded_rng(3), width=8, inner=16, state_size=4, heads=2, depth=1)
    a = np.random.default_rng(1).normal(size=(6, 8))
    out = fuser(Tensor(a), Tensor(np.zeros((0, 8))))
    assert out.shape == (6, 8)
    np.testing.assert_array_equal(out.data, fuser(Tensor(a)).data)
    assert not np.allclose(out.data, fuser(Tensor(a), Tensor(np.ones((2, 8))))[:6].data)


def test_attention_hand_softmax():
    attn = SelfAttention(seeded_rng(0), 2, heads=1)
    attn.q.w.data = np.eye(2)
    attn.k.w.data = np.eye(2)
    attn.q.b.data[:] = 0
    attn.k.b.data[:] = 0
    x = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    weights = attn.attention(Tensor(x)).data[0]
    scores = x @ x.T / np.sqrt(2)
    expected = np.exp(scores) / np.exp(scores).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(weights, expected, rtol=1e-14)


def test_attention_rows_stochastic():
    fuser = MTFuser(seeded_rng(4), width=8, inner=16, state_size=4, heads=4, depth=2)
    fuser(Tensor(np.random.default_rng(2).normal(size=(9, 8))))
    for block in fuser.blocks:
        np.testing.assert_allclose(block.attn.weights.sum(axis=-1), 1.0, atol=1e-12)


def test_mask_loss_values_and_locality():
    rng = np.random.default_rng(3)
    target = rng.normal(size=(4, 3))
    mask = np.array([True, False, True, False])
    assert mask_loss(Tensor(target), target, mask).item() == 0.0
    recon = rng.normal(size=(4, 3))
    e = ((recon - target) ** 2).mean(axis=1)
    assert mask_loss(Tensor(recon), target, mask).item() == pytest.approx((e[0] + e[2]) / 2, rel=1e-14)
    moved = target.copy()
    moved[1] += 10
    assert mask_loss(Tensor(recon), moved, mask).item() == mask_loss(Tensor(recon), target, mask).item()
    r = Tensor(recon, requires_grad=True)
    mask_loss(r, target, mask).backward()
    assert (r.grad[~mask] == 0).all()
    with pytest.raises(ValidationError):
        mask_loss(Tensor(recon), target, np.zeros(4, dtype=bool))


def test_prediction_head():
    head = PredictionHead(seeded_rng(5), 4, 2)
    head.mlp.fc2.w.data[:] = 0
    head.mlp.fc2.b.data = np.array([0.5, -1.5])
    rng = np.random.default_rng(0)
    for _ in range(3):
        np.testing.assert_array_equal(head(Tensor(rng.normal(size=(5, 4)))).data, [0.5, -1.5])
    u = rng.normal(size=(2, 4))
    head2 = PredictionHead(seeded_rng(6), 4, 1)
    np.testing.assert_allclose(head2(Tensor(u)).data, head2.mlp(Tensor((u[0] + u[1])[None] / 2)).data.reshape(-1), atol=1e-15)
    np.testing.assert_allclose(expit(np.array([50.0, -50.0])), [1.0, 0.0], atol=1e-20)
