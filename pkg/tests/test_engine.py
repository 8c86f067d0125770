from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stgcn import engine as E
from stgcn.gradcheck import check_gradients, rel_error
from stgcn.selftest import check_gradients_suite, op_cases


@pytest.fixture(autouse=True)
def float64():
    with E.precision(np.float64):
        yield


def leaf(rng, *shape):
    return E.Tensor(rng.normal(size=shape), requires_grad=True)


def test_default_dtype_switch():
    with E.precision(np.float32):
        assert E.Tensor([1.0]).dtype == np.float32
    assert E.get_default_dtype() == np.float64


def test_backward_needs_scalar():
    x = E.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(E.ShapeError, match="scalar"):
        (x * x).backward()


def test_matmul_sum_gradient_closed_form():
    rng = np.random.default_rng(0)
    a, b = leaf(rng, 3, 4), leaf(rng, 4, 2)
    E.sum_(a @ b).backward()
    assert np.allclose(a.grad, np.ones((3, 2)) @ b.data.T)
    assert np.allclose(b.grad, a.data.T @ np.ones((3, 2)))


def test_matmul_shape_errors():
    with pytest.raises(E.ShapeError):
        E.matmul(E.Tensor(np.ones((2, 3))), E.Tensor(np.ones((2, 3))))


def test_gradients_accumulate_across_backward_calls():
    x = E.Tensor(np.array([2.0]), requires_grad=True)
    E.sum_(x * x).backward()
    E.sum_(x * x).backward()
    assert x.grad.tolist() == [8.0]


def test_shared_subexpression():
    x = E.Tensor(np.array([3.0]), requires_grad=True)
    y = x * x
    E.sum_(y + y).backward()
    assert x.grad.tolist() == [12.0]


def test_no_grad_records_nothing():
    x = E.Tensor(np.ones(2), requires_grad=True)
    with E.no_grad():
        y = x * x
    assert y.is_leaf and not y.requires_grad


def test_mul_requires_equal_shapes():
    with pytest.raises(E.ShapeError):
        E.mul(E.Tensor(np.ones(3)), E.Tensor(np.ones(2)))


def test_conv_shapes_and_padding():
    x = E.Tensor(np.zeros((2, 3, 300, 18)))
    w = E.Tensor(np.zeros((5, 3, 9, 1)))
    assert E.conv2d_temporal(x, w, 1).shape == (2, 5, 300, 18)
    assert E.conv2d_temporal(x, w, 2).shape == (2, 5, 150, 18)
    assert E.conv_output_length(150, 9, 2, 4) == 75
    with pytest.raises(ValueError, match="odd"):
        E.conv2d_temporal(x, E.Tensor(np.zeros((5, 3, 4, 1))), 1)
    with pytest.raises(E.ShapeError):
        E.conv2d_temporal(x, E.Tensor(np.zeros((5, 2, 3, 1))), 1)


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(1)
    x, w = rng.normal(size=(2, 3, 7, 4)), rng.normal(size=(2, 3, 3, 1))
    got = E.conv2d_temporal(E.Tensor(x), E.Tensor(w), 2).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (0, 0)))
    ref = np.zeros_like(got)
    for to in range(got.shape[2]):
        window = xp[:, :, 2 * to:2 * to + 3, :]  # (N, C, 3, V)
        ref[:, :, to, :] = np.einsum("ncgv,ocg->nov", window, w[..., 0])
    assert np.allclose(got, ref, atol=1e-12)


def test_graph_contract_definition():
    rng = np.random.default_rng(2)
    x, adj = rng.normal(size=(2, 3, 4, 5, 6)), rng.normal(size=(3, 6, 6))
    got = E.graph_contract(E.Tensor(x), E.Tensor(adj)).data
    assert np.allclose(got, np.einsum("kiv,nkctv->ncti", adj, x), atol=1e-12)


def test_batch_norm_train_and_running_stats():
    rng = np.random.default_rng(3)
    x = rng.normal(2.0, 3.0, size=(2, 3, 4, 5))
    rm, rv = np.zeros(3), np.ones(3)
    out = E.batch_norm(E.Tensor(x), E.Tensor(np.ones(3)), E.Tensor(np.zeros(3)), rm, rv, True).data
    assert np.allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-12)
    assert np.allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-4)
    assert np.allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    assert np.allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)))


def test_batch_norm_eval_uses_running_stats():
    x = np.full((1, 2, 1, 1), 3.0)
    out = E.batch_norm(E.Tensor(x), E.Tensor(np.ones(2)), E.Tensor(np.zeros(2)),
                       np.array([1.0, 1.0]), np.array([4.0, 4.0]), False).data
    assert np.allclose(out, 2.0 / np.sqrt(4.0 + 1e-5))


def test_dropout_modes():
    x = E.Tensor(np.ones((100, 100)))
    assert E.dropout(x, 0.5, False) is x
    y = E.dropout(x, 0.5, True, np.random.default_rng(0)).data
    assert set(np.unique(y)) == {0.0, 2.0}
    assert abs(y.mean() - 1.0) < 0.05
    with pytest.raises(ValueError):
        E.dropout(x, 0.5, True)


def test_cross_entropy_value():
    logits = E.Tensor(np.log(np.array([[1.0, 1.0, 2.0]])))
    assert E.softmax_cross_entropy(logits, [2]).item() == pytest.approx(-np.log(0.5))
    with pytest.raises(ValueError):
        E.softmax_cross_entropy(logits, [3])


def test_cross_entropy_is_stable_for_large_logits():
    loss = E.softmax_cross_entropy(E.Tensor(np.array([[1e4, 0.0]])), [1]).item()
    assert loss == pytest.approx(1e4)


def test_relu_kinks_are_excluded():
    x = E.Tensor(np.array([1e-4, 1.0, -1.0]), requires_grad=True)
    r = check_gradients(lambda: E.sum_(E.relu(x)), {"x": x}, eps=1e-3)
    assert r.kinked == 1 and r.checked == 2 and r.ok()


def test_rel_error_floor():
    assert rel_error(1e-9, 0.0) == pytest.approx(1e-3)
    assert rel_error(2.0, 1.0) == pytest.approx(0.5)


@pytest.mark.parametrize("name,build", op_cases(np.random.default_rng(7)), ids=lambda v: v if isinstance(v, str) else "")
def test_op_gradients(name, build):
    fn, leaves = build()
    r = check_gradients(fn, leaves, 1e-3)
    assert r.ok(1e-3), (name, r)


def test_unit_gradient_suite():
    results = check_gradients_suite(seed=11)
    assert all(r.passed for r in results), [r.to_dict() for r in results if not r.passed]


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 9), st.sampled_from([1, 3, 5]), st.integers(1, 3),
       st.integers(0, 2**31 - 1))
def test_conv_gradient_property(N, C, T, kernel, stride, seed):
    rng = np.random.default_rng(seed)
    x, w = leaf(rng, N, C, T, 2), leaf(rng, 2, C, kernel, 1)
    out = E.conv2d_temporal(x, w, stride)
    assert out.shape == (N, 2, E.conv_output_length(T, kernel, stride, kernel // 2), 2)
    probe = E.Tensor(rng.normal(size=out.shape))
    r = check_gradients(lambda: E.sum_(E.mul(E.conv2d_temporal(x, w, stride), probe)), {"x": x, "w": w})
    assert r.ok(1e-3)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_cross_entropy_gradient_rows_sum_to_zero(N, K, seed):
    rng = np.random.default_rng(seed)
    z = leaf(rng, N, K)
    E.softmax_cross_entropy(z, rng.integers(0, K, N)).backward()
    assert np.allclose(z.grad.sum(axis=1), 0, atol=1e-12)
