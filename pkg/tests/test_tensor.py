import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from doublemix import tensor as T
from doublemix.errors import ContractError, DimensionError, NumericError
from helpers import check_grads


def rand(rng, *shape):
    return rng.uniform(-1, 1, size=shape)


# --- forward values -------------------------------------------------------


def test_matmul_identity_and_hand_product():
    a = np.array([[0.3, -1.2], [2.0, 0.5]])
    assert np.array_equal(T.matmul(T.Tensor(np.eye(2)), T.Tensor(a)).data, a)
    out = T.matmul(T.Tensor([[1.0, 2.0], [3.0, 4.0]]), T.Tensor([[0.0], [1.0]]))
    assert out.data.tolist() == [[2.0], [4.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((2, 3))))


def test_elementwise_basics():
    x = T.Tensor([[0.5, -2.0]])
    assert np.array_equal(T.elementwise("add", x, T.zeros_like(x)).data, x.data)
    assert T.elementwise("tanh", T.Tensor(0.0)).item() == 0.0
    assert T.elementwise("relu", T.Tensor([-1.0, 2.0])).data.tolist() == [0.0, 2.0]
    assert np.array_equal(T.elementwise("scale", x, 3.0).data, 3.0 * x.data)
    with pytest.raises(ContractError):
        T.elementwise("sigmoid", x)


def test_broadcast_only_scalar_or_equal_shapes():
    x = T.Tensor(np.ones((2, 3)))
    assert T.add(x, T.Tensor(2.0)).data.tolist() == [[3.0] * 3] * 2
    with pytest.raises(DimensionError):
        T.add(x, T.Tensor(np.ones(3)))
    with pytest.raises(DimensionError):
        T.mul(x, T.Tensor(np.ones((3, 2))))


def test_log_softmax_examples():
    out = T.log_softmax(T.Tensor([[0.0, 0.0]])).data
    assert np.allclose(out, math.log(0.5), atol=1e-15)

    big = T.log_softmax(T.Tensor([[1000.0, 0.0]])).data
    assert np.all(np.isfinite(big))
    assert abs(np.exp(big).sum() - 1) < 1e-9

    # direct formula evaluated in exact-ish arithmetic
    from mpmath import mp, mpf, exp, log
    mp.dps = 40
    xs = [mpf(1), mpf(2), mpf(3)]
    lse = log(sum(exp(v) for v in xs))
    expect = [float(v - lse) for v in xs]
    got = T.log_softmax(T.Tensor([[1.0, 2.0, 3.0]])).data[0]
    assert np.allclose(got, expect, rtol=0, atol=1e-14)


def test_log_softmax_errors():
    with pytest.raises(NumericError):
        T.log_softmax(T.Tensor([[np.nan, 0.0]]))
    with pytest.raises(NumericError):
        T.log_softmax(T.Tensor([[np.inf, 0.0]]))
    with pytest.raises(ContractError):
        T.log_softmax(T.Tensor([[1.0]]))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-1e3, 1e3)))
def test_log_softmax_rows_normalised(x):
    p = np.exp(T.log_softmax(T.Tensor(x)).data)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_embedding_lookup():
    table = T.Tensor(np.arange(12.0).reshape(4, 3))
    out = T.embedding_lookup(table, np.zeros((2, 5), dtype=int))
    assert out.shape == (2, 5, 3)
    assert np.all(out.data == table.data[0])
    empty = T.embedding_lookup(table, np.zeros((2, 0), dtype=int))
    assert empty.shape == (2, 0, 3)


def test_embedding_lookup_out_of_range_reports_position():
    table = T.Tensor(np.zeros((4, 2)))
    with pytest.raises(IndexError, match=r"\(1, 2\)"):
        T.embedding_lookup(table, np.array([[0, 1, 2], [3, 0, 7]]))


def test_embedding_gradient_counts_ids():
    rng = np.random.default_rng(0)
    ids = rng.integers(0, 6, size=(4, 7))
    table = T.parameter(rand(rng, 6, 3))
    with T.Tape() as tape:
        loss = T.sum(T.embedding_lookup(table, ids))
    T.backward(loss, tape)
    # counting oracle: each row's gradient is how often its id appears
    counts = np.bincount(ids.ravel(), minlength=6)
    assert np.array_equal(table.grad, np.repeat(counts[:, None], 3, axis=1).astype(float))


def test_masked_mean_pool():
    rng = np.random.default_rng(1)
    h = rand(rng, 2, 1, 3)
    assert np.array_equal(T.masked_mean_pool(T.Tensor(h), np.ones((2, 1))).data, h[:, 0, :])

    const = np.broadcast_to(np.array([0.1, -0.4]), (1, 5, 2)).copy()
    assert np.allclose(T.masked_mean_pool(T.Tensor(const), np.ones((1, 5))).data, [[0.1, -0.4]])

    h = rand(rng, 2, 4, 3)
    mask = np.array([[1, 0, 1, 1], [0, 1, 0, 0]], dtype=float)
    expect = np.stack([h[0, [0, 2, 3]].sum(axis=0) / 3, h[1, 1]])
    assert np.allclose(T.masked_mean_pool(T.Tensor(h), mask).data, expect, atol=1e-15)


def test_masked_mean_pool_all_masked_row():
    with pytest.raises(ContractError, match="row 1"):
        T.masked_mean_pool(T.Tensor(np.zeros((2, 3, 1))), np.array([[1, 0, 0], [0, 0, 0]]))


# --- backward -------------------------------------------------------------


def test_backward_simple_cases():
    x = T.parameter([1.0, -2.0, 3.0])
    with T.Tape() as tape:
        loss = T.sum(x)
    T.backward(loss, tape)
    assert x.grad.tolist() == [1.0, 1.0, 1.0]

    x.zero_grad()
    with T.Tape() as tape:
        loss = T.scale(T.sum(T.mul(x, x)), 0.5)
    T.backward(loss, tape)
    assert np.array_equal(x.grad, x.data)


def test_backward_rejects_non_scalar_and_foreign_loss():
    x = T.parameter([1.0, 2.0])
    with T.Tape() as tape:
        y = T.tanh(x)
    with pytest.raises(ContractError):
        T.backward(y, tape)
    with T.Tape() as other:
        loss = T.sum(x)
    with pytest.raises(ContractError):
        T.backward(loss, tape)
    T.backward(loss, other)


def test_backward_accumulates_without_reset():
    x = T.parameter([0.2, -0.7])

    def step():
        with T.Tape() as tape:
            loss = T.sum(T.tanh(x))
        T.backward(loss, tape)

    step()
    first = x.grad.copy()
    step()
    assert np.array_equal(x.grad, 2 * first)


def test_backward_is_deterministic():
    rng = np.random.default_rng(3)
    w = T.parameter(rand(rng, 5, 4))
    xs = rand(rng, 6, 5)

    def run():
        w.grad = None
        with T.Tape() as tape:
            loss = T.mean(T.log_softmax(T.tanh(T.matmul(T.Tensor(xs), w))))
        T.backward(loss, tape)
        return w.grad.copy()

    assert np.array_equal(run(), run())


def test_no_tape_means_no_recording():
    x = T.parameter([1.0])
    y = T.tanh(x)
    assert not y.requires_grad
    with T.Tape() as tape:
        T.tanh(T.Tensor([1.0]))
    assert len(tape) == 0


def test_recorded_values_are_read_only():
    x = T.parameter([1.0, 2.0])
    with T.Tape():
        y = T.tanh(x)
    with pytest.raises(ValueError):
        y.data[0] = 5.0


def test_tape_reset_clears_nodes():
    x = T.parameter([1.0])
    with T.Tape() as tape:
        T.exp(x)
    assert len(tape) == 1
    tape.reset()
    assert len(tape) == 0


# --- finite-difference checks for every primitive --------------------------


@pytest.mark.parametrize("seed", range(3))
def test_fd_binary_and_unary(seed):
    rng = np.random.default_rng(seed)
    a = T.parameter(rand(rng, 3, 4))
    b = T.parameter(rand(rng, 3, 4))
    c = T.parameter(rand(rng))
    bias = T.parameter(rand(rng, 4))
    check_grads(lambda: T.sum(T.mul(T.add(a, b), T.sub(b, c))), [a, b, c])
    check_grads(lambda: T.sum(T.tanh(T.add_bias(T.scale(a, 1.7), bias))), [a, bias])
    check_grads(lambda: T.sum(T.exp(a)), [a])
    # shift away from 0 so the finite step never crosses the relu kink or the log floor
    shifted = T.parameter(np.abs(rand(rng, 3, 4)) + 0.1)
    check_grads(lambda: T.sum(T.log(shifted)), [shifted])
    check_grads(lambda: T.sum(T.mul(T.relu(T.sub(shifted, T.Tensor(0.5))), shifted)), [shifted])


@pytest.mark.parametrize("seed", range(3))
def test_fd_matmul_softmax_pool(seed):
    rng = np.random.default_rng(10 + seed)
    a = T.parameter(rand(rng, 3, 5))
    b = T.parameter(rand(rng, 5, 2))
    check_grads(lambda: T.sum(T.matmul(a, b)), [a, b])
    w = T.parameter(rand(rng, 4, 3))
    check_grads(lambda: T.sum(T.mul(T.log_softmax(w), T.Tensor(rand(np.random.default_rng(0), 4, 3)))), [w])

    h = T.parameter(rand(rng, 2, 4, 3))
    mask = np.array([[1, 1, 0, 0], [1, 1, 1, 1]], dtype=float)
    g = rand(rng, 2, 3)
    check_grads(lambda: T.sum(T.mul(T.masked_mean_pool(h, mask), T.Tensor(g))), [h])
    check_grads(lambda: T.sum(T.tanh(T.reshape(h, (8, 3)))), [h])
    check_grads(lambda: T.sum(T.mul(T.sum(h, axis=1), T.Tensor(g))), [h])


@pytest.mark.parametrize("seed", range(3))
def test_fd_gather_primitives(seed):
    rng = np.random.default_rng(20 + seed)
    table = T.parameter(rand(rng, 5, 3))
    ids = rng.integers(0, 5, size=(2, 4))
    weights = T.Tensor(rand(rng, 2, 4, 3))
    check_grads(lambda: T.sum(T.mul(T.embedding_lookup(table, ids), weights)), [table])

    x = T.parameter(rand(rng, 4, 3))
    idx = np.array([2, 0, 2, 1])
    check_grads(lambda: T.sum(T.tanh(T.take_rows(x, idx))), [x])
    check_grads(lambda: T.sum(T.exp(T.pick(x, [0, 2, 1, 1]))), [x])


@pytest.mark.parametrize("seed", range(3))
def test_fd_kl_rows(seed):
    rng = np.random.default_rng(30 + seed)
    a = T.parameter(rand(rng, 3, 4))
    b = T.parameter(rand(rng, 3, 4))
    w = T.Tensor(rand(rng, 3))
    check_grads(lambda: T.sum(T.mul(T.kl_rows(T.log_softmax(a), T.log_softmax(b)), w)), [a, b])


def test_kl_rows_zero_probability_terms_vanish():
    lp = T.Tensor([[0.0, -np.inf]])
    lq = T.Tensor([[math.log(0.5), math.log(0.5)]])
    assert abs(T.kl_rows(lp, lq).item() - math.log(2)) < 1e-15
