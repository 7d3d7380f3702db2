import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from treepool import numcore as nc


def naive_matmul(a, b):
    n, m = a.shape
    m2, p = b.shape
    assert m == m2
    out = np.zeros((n, p))
    for i in range(n):
        for j in range(p):
            for k in range(m):
                out[i, j] += a[i, k] * b[k, j]
    return out


def small(rows=st.integers(1, 4), cols=st.integers(1, 4)):
    return st.tuples(rows, cols).flatmap(
        lambda s: arrays(np.float64, s, elements=st.floats(-2, 2, allow_nan=False)))


def test_identity_matmul():
    x = np.arange(6.0).reshape(2, 3)
    assert np.array_equal((nc.eye(2) @ nc.tensor(x)).data, x)


@given(st.integers(0, 2**31), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
def test_matmul_transpose_matches_naive(seed, n, m, p):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, m)), rng.normal(size=(m, p))
    lhs = (nc.tensor(a) @ nc.tensor(b)).T.data
    rhs = (nc.tensor(b).T @ nc.tensor(a).T).data
    assert np.allclose(lhs, naive_matmul(a, b).T)
    assert np.allclose(lhs, rhs)


def test_trace_of_gram_gradient():
    x = np.array([[1.0, -2.0], [0.5, 3.0], [4.0, 0.0]])
    t = nc.tensor(x, requires_grad=True)
    nc.trace(t.T @ t).backward()
    assert np.allclose(t.grad, 2 * x)


def test_softmax_uniform_and_stable():
    s = nc.softmax_rows(nc.tensor([[0.0, 0.0, 0.0]])).data
    assert np.allclose(s, 1 / 3)
    big = nc.softmax_rows(nc.tensor([[1000.0, 0.0]])).data
    assert np.all(np.isfinite(big))
    assert big[0, 0] == pytest.approx(1.0) and big[0, 1] == pytest.approx(0.0, abs=1e-300)


def test_sigmoid_extremes():
    s = nc.sigmoid(nc.tensor([[0.0, 800.0, -800.0]])).data
    assert s[0, 0] == 0.5
    assert s[0, 1] == 1.0 and s[0, 2] == 0.0


def test_trace_needs_square():
    with pytest.raises(nc.DimensionError):
        nc.trace(nc.tensor(np.ones((2, 3))))
    with pytest.raises(nc.DimensionError):
        nc.diag(nc.tensor(np.ones((3, 2))))


def test_add_shape_mismatch():
    with pytest.raises(nc.DimensionError):
        nc.tensor(np.ones((2, 3))) + nc.tensor(np.ones((3, 2)))


@given(small())
def test_trace_gram_is_sum_of_squares(p):
    assert nc.trace(nc.gram(nc.tensor(p))).item() == pytest.approx(float((p ** 2).sum()))
    assert nc.frobenius(nc.tensor(p)).item() == pytest.approx(math.sqrt(float((p ** 2).sum())))


def test_cross_entropy_values():
    assert nc.cross_entropy(nc.tensor([[0.0, 0.0]]), 0).item() == pytest.approx(math.log(2))
    assert nc.cross_entropy(nc.tensor([[1000.0, 0.0]]), 1).item() == pytest.approx(1000.0)
    with pytest.raises(IndexError):
        nc.cross_entropy(nc.tensor([[0.0, 0.0]]), 2)
    with pytest.raises(IndexError):
        nc.cross_entropy(nc.tensor([[0.0, 0.0]]), -1)


def test_backward_needs_scalar():
    t = nc.tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(nc.DimensionError):
        (t * 2.0).backward()


def test_shared_subexpression_accumulates():
    t = nc.tensor([[3.0]], requires_grad=True)
    y = t * t + t
    y.backward()
    assert t.grad[0, 0] == pytest.approx(7.0)


def test_frobenius_zero_subgradient():
    t = nc.tensor(np.zeros((2, 2)), requires_grad=True)
    nc.frobenius(t).backward()
    assert t.grad is None or np.all(t.grad == 0)


def test_debug_mode_flags_non_finite(monkeypatch):
    monkeypatch.setattr(nc, "DEBUG", True)
    with np.errstate(divide="ignore"):
        with pytest.raises(nc.NonFiniteError):
            nc.log(nc.tensor([[0.0]]))


def test_quad_trace_matches_explicit():
    rng = np.random.default_rng(3)
    p, m = rng.normal(size=(4, 2)), rng.normal(size=(4, 4))
    assert nc.quad_trace(nc.tensor(p), m).item() == pytest.approx(np.trace(p.T @ m @ p))
    with pytest.raises(nc.DimensionError):
        nc.quad_trace(nc.tensor(p), np.eye(3))


def test_rows_gather_scatter():
    e = nc.tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    nc.sum(nc.rows(e, [0, 2, 0])).backward()
    assert np.array_equal(e.grad, [[2, 2], [0, 0], [1, 1]])


UNARY = {
    "sigmoid": nc.sigmoid,
    "softmax": nc.softmax_rows,
    "log_softmax": nc.log_softmax_rows,
    "exp": nc.exp,
    "gram": nc.gram,
    "offdiag_gram": lambda t: nc.offdiag(nc.gram(t)),
    "diag_gram": lambda t: nc.diag(nc.gram(t)),
    "frobenius": lambda t: nc.frobenius(t) + 0.0,
    "power": lambda t: nc.power(nc.sigmoid(t), 3.0),
    "sqrt": lambda t: nc.sqrt(nc.sigmoid(t)),
    "log": lambda t: nc.log(nc.sigmoid(t)),
    "div": lambda t: t / (nc.sigmoid(t) + 1.0),
    "hstack": lambda t: nc.hstack([t, nc.sigmoid(t)]),
    "sum_axis0": lambda t: nc.sum(t, axis=0),
    "sum_axis1": lambda t: nc.sum(t, axis=1),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@given(st.integers(0, 2**31))
def test_op_gradients(name, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2, 2, size=(3, 3))
    w = rng.uniform(-1, 1, size=UNARY[name](nc.tensor(x)).shape)
    rep = nc.grad_check(lambda t: nc.sum(UNARY[name](t) * w), x)
    assert rep.passed, rep


@given(st.integers(0, 2**31))
def test_matmul_and_broadcast_gradients(seed):
    rng = np.random.default_rng(seed)
    a, b, bias = rng.uniform(-2, 2, (3, 4)), rng.uniform(-2, 2, (4, 2)), rng.uniform(-2, 2, (1, 2))
    rep = nc.grad_check(lambda ta, tb, tc: nc.sum(nc.relu(ta @ tb + tc) * 1.5), a, b, bias)
    assert rep.passed, rep


def test_grad_check_detects_wrong_gradient():
    def bad(t):
        out = nc.Tensor._result(t.data ** 2, (t,), "bad")
        if out.requires_grad:
            out._backward = lambda: t._acc(out.grad * t.data)  # should be 2x
        return nc.sum(out)

    rep = nc.grad_check(bad, np.array([[1.0, 2.0]]))
    assert not rep.passed
    assert rep.max_rel_error == pytest.approx(0.5, rel=1e-3)
