import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from molmamba.errors import NumericError, ShapeError, ValidationError
from molmamba.tensor import Linear, Module, Parameter, Tensor, checkpoint, fan_in_uniform, no_grad, seeded_rng
from molmamba.tensor import ops
from oracles import gradcheck

RNG = np.random.default_rng(42)


def rand(*shape):
    return RNG.normal(size=shape)


UNARY = {
    "exp": ops.exp,
    "sigmoid": ops.sigmoid,
    "softplus": ops.softplus,
    "silu": ops.silu,
    "neg": lambda x: -x,
    "transpose": lambda x: x.transpose(1, 0),
    "reshape": lambda x: x.reshape(4, 3),
    "slice": lambda x: x[1:, ::2],
    "sum_axis": lambda x: x.sum(axis=0),
    "mean": lambda x: x.mean(axis=1, keepdims=True),
    "softmax_rows": lambda x: ops.softmax(x, axis=1),
    "softmax_cols": lambda x: ops.softmax(x, axis=0),
    "log_softmax": lambda x: ops.log_softmax(x, axis=1),
    "layernorm": lambda x: ops.layernorm(x, axis=1),
    "gather": lambda x: ops.gather(x, [2, 0, 2]),
    "segment_max": lambda x: ops.segment_max(x, [1, 0, 1], 2),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradcheck(name):
    assert gradcheck(UNARY[name], [rand(3, 4)]) <= 1e-6


def test_log_gradcheck():
    assert gradcheck(ops.log, [np.abs(rand(3, 4)) + 0.5]) <= 1e-6


BINARY = {
    "add": (lambda a, b: a + b, (3, 4), (3, 4)),
    "add_broadcast": (lambda a, b: a + b, (3, 4), (4,)),
    "sub": (lambda a, b: a - b, (3, 4), (1, 4)),
    "mul": (lambda a, b: a * b, (3, 4), (3, 1)),
    "div": (lambda a, b: a / (b * b + 1.0), (3, 4), (3, 4)),
    "matmul": (lambda a, b: a @ b, (3, 4), (4, 2)),
    "batched_matmul": (lambda a, b: a @ b, (2, 3, 4), (2, 4, 3)),
    "linear": (lambda a, b: ops.linear(a, b), (3, 4), (4, 5)),
    "concat0": (lambda a, b: ops.concat([a, b], axis=0), (3, 4), (2, 4)),
    "concat1": (lambda a, b: ops.concat([a, b], axis=1), (3, 4), (3, 2)),
    "mse": (lambda a, b: ops.mse(a, b), (3, 4), (3, 4)),
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_gradcheck(name):
    op, sa, sb = BINARY[name]
    assert gradcheck(op, [rand(*sa), rand(*sb)]) <= 1e-6


def test_linear_with_bias_gradcheck():
    assert gradcheck(ops.linear, [rand(3, 4), rand(4, 5), rand(5)]) <= 1e-6


def test_conv1d_gradcheck():
    assert gradcheck(ops.conv1d_causal, [rand(6, 3), rand(3, 4), rand(3)]) <= 1e-6


def test_selective_scan_gradcheck():
    delta = np.log1p(np.exp(rand(5, 3)))
    a = -np.exp(rand(3, 2))
    assert gradcheck(ops.selective_scan, [rand(5, 3), delta, a, rand(5, 2), rand(5, 2)]) <= 1e-6


def test_loss_gradchecks():
    targets = (RNG.random((3, 4)) > 0.5).astype(float)
    weights = np.array([[1, 0, 1, 1], [1, 1, 1, 0], [0, 1, 1, 1]], dtype=float)
    bce = lambda z: ops.binary_cross_entropy_with_logits(z, targets, weights)  # noqa: E731
    assert gradcheck(bce, [rand(3, 4)]) <= 1e-6
    assert gradcheck(lambda z: ops.cross_entropy(z, np.array([0, 3, 1])), [rand(3, 4)]) <= 1e-6
    soft = ops.softmax(Tensor(rand(3, 4)), axis=1).data
    assert gradcheck(lambda z: ops.cross_entropy(z, soft), [rand(3, 4)]) <= 1e-6


def test_analytic_points():
    assert ops.silu(Tensor(0.0)).item() == 0.0
    assert ops.softplus(Tensor(0.0)).item() == pytest.approx(math.log(2), abs=1e-15)
    np.testing.assert_array_equal(ops.layernorm(Tensor(np.full((2, 5), 3.7)), axis=1).data, 0.0)


def test_loss_values():
    z = np.array([0.3, -1.2])
    t = np.array([1.0, 0.0])
    expected = np.mean([math.log(1 + math.exp(-0.3)), math.log(1 + math.exp(-1.2))])
    assert ops.binary_cross_entropy_with_logits(Tensor(z), t).item() == pytest.approx(expected, rel=1e-14)
    logits = np.array([[1.0, 2.0, 3.0]])
    expected = -(3.0 - math.log(math.exp(1) + math.exp(2) + math.exp(3)))
    assert ops.cross_entropy(Tensor(logits), np.array([2])).item() == pytest.approx(expected, rel=1e-14)


def test_bce_without_weight_rejected():
    with pytest.raises(ValidationError):
        ops.binary_cross_entropy_with_logits(Tensor(np.zeros(2)), np.zeros(2), np.zeros(2))


def test_fan_out_accumulates():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    (x + x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])
    y = Tensor(np.array(3.0), requires_grad=True)
    (y * y * y).backward()
    assert y.grad == pytest.approx(27.0)


def test_backward_visits_each_node_once():
    calls = []
    x = Tensor(np.ones(3), requires_grad=True)
    h = ops.exp(x)
    original = h._backward
    h._backward = lambda g: calls.append(1) or original(g)
    (h * 2.0 + h * 3.0 + h).sum().backward()
    assert calls == [1]
    np.testing.assert_allclose(x.grad, 6.0 * np.e)


def test_shape_errors_name_op():
    with pytest.raises(ShapeError, match="add"):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4, 3)))
    with pytest.raises(ShapeError, match="matmul"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    with pytest.raises(ShapeError, match="softmax"):
        ops.softmax(Tensor(np.ones((2, 3))), axis=2)
    with pytest.raises(ShapeError, match="layernorm"):
        ops.layernorm(Tensor(np.ones((2, 3))), axis=-3)
    with pytest.raises(ShapeError, match="concat"):
        ops.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2)))], axis=0)
    with pytest.raises(ShapeError, match="gather"):
        ops.gather(Tensor(np.ones((2, 3))), [2])


def test_non_finite_output_fails_fast():
    with pytest.raises(NumericError, match="exp"):
        ops.exp(Tensor(np.array([1000.0])))
    with pytest.raises(NumericError, match="log"):
        ops.log(Tensor(np.array([0.0, 1.0])))


def test_ops_do_not_mutate_inputs():
    arrays = [rand(3, 4) for _ in range(2)]
    copies = [a.copy() for a in arrays]
    a, b = (Tensor(x, requires_grad=True) for x in arrays)
    out = ops.layernorm(ops.softmax(a * b + a, axis=1), axis=0) @ Tensor(rand(4, 2))
    out.sum().backward()
    for x, c in zip(arrays, copies):
        np.testing.assert_array_equal(x, c)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = ops.exp(x) * 2.0
    assert not y.requires_grad
    assert y._parents == ()


def test_seeded_rng_streams():
    np.testing.assert_array_equal(seeded_rng(7).random(100), seeded_rng(7).random(100))
    assert not np.array_equal(seeded_rng(0).random(10), seeded_rng(1).random(10))


def test_fan_in_variance():
    draws = fan_in_uniform(seeded_rng(0), 100, 100_000)
    assert abs(draws.var() - 0.01) <= 0.2 * 0.01


class _Pair(Module):
    def __init__(self, rng):
        self.first = Linear(rng, 3, 2)
        self.stack = [Linear(rng, 2, 2), Linear(rng, 2, 1, bias=False)]
        self.scale = Parameter(np.ones(1))


def test_named_parameters_paths():
    names = [n for n, _ in _Pair(seeded_rng(0)).named_parameters()]
    assert names == ["first.w", "first.b", "stack.0.w", "stack.0.b", "stack.1.w", "scale"]
    a, b = _Pair(seeded_rng(5)), _Pair(seeded_rng(5))
    for (_, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        np.testing.assert_array_equal(p.data, q.data)


def test_checkpoint_round_trip(tmp_path):
    params = {"a.w": rand(3, 4), "b": np.array(2.5), "c.0.bias": rand(5), "empty": np.zeros((0, 3))}
    path = tmp_path / "x.ckpt"
    checkpoint.save(path, params)
    blob = path.read_bytes()
    assert blob.startswith(b"MMCKPT1")
    loaded = checkpoint.load(path)
    assert list(loaded) == list(params)
    for name, value in params.items():
        assert loaded[name].shape == value.shape
        assert loaded[name].tobytes() == value.astype("<f8").tobytes()
    assert checkpoint.encode(loaded) == blob


def test_checkpoint_rejects_corruption():
    blob = checkpoint.encode({"w": np.ones(3)})
    with pytest.raises(ValidationError):
        checkpoint.decode(b"XXCKPT1" + blob[7:])
    with pytest.raises(ValidationError):
        checkpoint.decode(blob[:-4])
    with pytest.raises(ValidationError):
        checkpoint.decode(blob + b"\0")


_OPS = [
    lambda a, b: a + b,
    lambda a, b: a * b,
    lambda a, b: a - b * 0.5,
    lambda a, b: ops.silu(a) + b,
    lambda a, b: ops.sigmoid(a) * ops.softplus(b),
    lambda a, b: ops.softmax(a, axis=1) * b,
    lambda a, b: ops.layernorm(a + b, axis=1),
    lambda a, b: ops.exp(a * 0.3) - b,
]


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(0, len(_OPS) - 1), st.integers(0, 9), st.integers(0, 9)), min_size=1, max_size=6))
def test_random_dag_gradcheck(program):
    def run(x, y):
        nodes = [x, y]
        for op, i, j in program:
            nodes.append(_OPS[op](nodes[i % len(nodes)], nodes[j % len(nodes)]))
        return nodes[-1]

    rng = np.random.default_rng(len(program))
    assert gradcheck(run, [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]) <= 1e-6
