import math

import numpy as np
import pytest

from src.errors import ConfigError, DegenerateRowError, RangeError, ShapeError
from src.numerics import ops
from src.numerics.optim import ParamStore, adam_step, warmup_lr
from src.numerics.rng import Rng
from src.numerics.tensor import Tensor, as_tensor, no_grad, precision, result, set_precision


def test_backward_through_shared_subexpression():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    y = ops.sum_all(ops.add(ops.mul(x, x), x))
    y.backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_broadcast_add_unbroadcasts_gradient():
    a = Tensor(np.ones((3, 2)), requires_grad=True)
    b = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    ops.sum_all(a + b).backward()
    np.testing.assert_array_equal(b.grad, [3.0, 3.0])
    np.testing.assert_array_equal(a.grad, np.ones((3, 2)))


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = ops.mul(x, x)
    assert not y.requires_grad
    y = ops.mul(x, x)
    assert y.requires_grad


def test_precision_switch():
    set_precision("float32")
    assert Tensor([1.0]).data.dtype == np.float32
    set_precision("float64")
    assert precision() is np.float64
    with pytest.raises(ConfigError):
        set_precision("float16")


def test_gather_rows_accumulates_repeated_ids():
    table = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    ops.sum_all(ops.gather_rows(table, [0, 2, 0])).backward()
    np.testing.assert_array_equal(table.grad, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])
    with pytest.raises(RangeError):
        ops.gather_rows(table, [3])


def test_shape_errors():
    with pytest.raises(ShapeError):
        ops.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        ops.add(np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(ShapeError):
        ops.concat_rows([np.ones((1, 2)), np.ones((1, 3))])


def test_attention_masks_and_degenerate_rows():
    q = np.ones((2, 4))
    k = np.ones((3, 4))
    v = np.arange(12.0).reshape(3, 4)
    mask = np.array([[True, False, False], [True, True, True]])
    out = ops.attention(q, k, v, mask, heads=2).data
    np.testing.assert_allclose(out[0], v[0])
    np.testing.assert_allclose(out[1], v.mean(axis=0))
    with pytest.raises(DegenerateRowError):
        ops.attention(q, k, v, np.zeros((2, 3), dtype=bool), heads=2)
    with pytest.raises(ShapeError):
        ops.attention(q, k, v, mask, heads=3)


def test_attention_bias_shifts_scores_per_head():
    q = np.zeros((1, 2))
    k = np.zeros((2, 2))
    v = np.array([[1.0, 1.0], [3.0, 3.0]])
    bias = np.array([[0.0, 0.0], [math.log(3.0), 0.0]])
    out = ops.attention(q, k, v, np.ones((1, 2), dtype=bool), heads=2, bias=bias).data
    np.testing.assert_allclose(out, [[2.5, 2.0]])


def test_softmax_ce():
    uniform = np.zeros((4, 8))
    assert ops.softmax_ce(uniform, [0, 1, 2, 3]).item() == pytest.approx(math.log(8))
    logits = np.array([[10.0, 0.0], [0.0, 10.0]])
    only_first = ops.softmax_ce(logits, [1, 1], positions=[0]).item()
    assert only_first == pytest.approx(10.0, abs=1e-3)
    with pytest.raises(RangeError):
        ops.softmax_ce(uniform, [0, 1, 2, 8])
    with pytest.raises(ShapeError):
        ops.softmax_ce(uniform, [0, 1, 2, 3], positions=[])


def test_softmax_rows_sum_to_one():
    z = Rng(0, "test/softmax").normal(30.0, (200, 64))
    z[0] = 0.0
    z[1, 5] = 700.0
    np.testing.assert_allclose(ops.softmax(z).sum(axis=-1), 1.0, rtol=0, atol=1e-12)


def test_gelu_values():
    out = ops.gelu(np.array([0.0, 10.0, -10.0])).data
    np.testing.assert_allclose(out, [0.0, 10.0, 0.0], atol=1e-12)


def test_adam_first_step_moves_by_learning_rate():
    store = ParamStore()
    p = store.add("w", np.array([1.0, -1.0]))
    p.grad = np.array([0.5, -2.0])
    adam_step(store, lr=0.1)
    np.testing.assert_allclose(store["w"].data, [0.9, -0.9], atol=1e-6)
    assert store.step_count == 1
    assert store["w"].grad is None


def test_param_store_guards():
    store = ParamStore()
    store.add("w", np.zeros(2))
    with pytest.raises(ConfigError):
        store.add("w", np.zeros(2))
    with pytest.raises(ShapeError):
        store.load_arrays({"w": np.zeros(3)})
    with pytest.raises(ShapeError):
        store.load_arrays({})


def test_warmup_schedule():
    assert warmup_lr(1e-3, 0, 100, 0.05) == pytest.approx(2e-4)
    assert warmup_lr(1e-3, 4, 100, 0.05) == pytest.approx(1e-3)
    assert warmup_lr(1e-3, 50, 100, 0.05) == 1e-3
    assert warmup_lr(1e-3, 0, 100, 0.0) == 1e-3


def test_rng_streams_are_named_and_independent():
    a, b = Rng(3, "data"), Rng(3, "data")
    np.testing.assert_array_equal(a.integers(0, 1000, size=8), b.integers(0, 1000, size=8))
    parent = Rng(3, "data")
    parent.random(100)
    np.testing.assert_array_equal(parent.child("x").random(4), Rng(3, "data/x").random(4))
    assert not np.array_equal(Rng(3, "data").random(4), Rng(4, "data").random(4))


def test_result_leaves_constants_untracked():
    x = as_tensor(np.ones(2))
    out = result(x.data * 2, (x,), lambda grad: None)
    assert not out.requires_grad
