"""Numeric-core unit tests: hand examples, invariants, and tape behavior."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

import shapegraph.autodiff as ad
from shapegraph.errors import DimensionError, NumericError


def test_matmul_identity():
    m = np.arange(9.0).reshape(3, 3)
    out = ad.matmul(ad.constant(np.eye(3)), ad.constant(m))
    assert_array_equal(out.data, m)


def test_matmul_hand_case():
    out = ad.matmul(ad.constant([[1.0, 2.0], [3.0, 4.0]]),
                    ad.constant([[1.0], [1.0]]))
    assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3))))


def test_softmax_uniform():
    out = ad.softmax_rows(ad.constant([[0.0, 0.0, 0.0]]))
    assert_allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]], rtol=0, atol=1e-15)


def test_softmax_extreme_logits_saturate():
    out = ad.softmax_rows(ad.constant([[1000.0, 0.0]]))
    assert_allclose(out.data, [[1.0, 0.0]], rtol=0, atol=1e-12)


def test_softmax_rows_sum_to_one_at_large_magnitude():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1e3, 1e3, size=(7, 9))
    out = ad.softmax_rows(ad.constant(x))
    assert_allclose(out.data.sum(axis=1), np.ones(7), rtol=0, atol=1e-12)
    assert np.all(out.data >= 0)


def test_row_l2_hand_case():
    out = ad.row_l2_normalize(ad.constant([[3.0, 4.0]]))
    assert_allclose(out.data, [[0.6, 0.8]], rtol=0, atol=1e-15)


def test_row_l2_unit_row_fixed_point():
    u = np.array([[1.0, 0.0, 0.0]])
    out = ad.row_l2_normalize(ad.constant(u))
    assert_array_equal(out.data, u)


def test_row_l2_zero_row_rejected():
    with pytest.raises(NumericError):
        ad.row_l2_normalize(ad.constant([[0.0, 0.0]]))


def test_leaky_relu_hand_case():
    out = ad.leaky_relu(ad.constant([[-1.0, 2.0]]), 0.2)
    assert_allclose(out.data, [[-0.2, 2.0]], rtol=0, atol=1e-15)


def test_max_over_rows_hand_case():
    out = ad.max_over_rows(ad.constant([[1.0, 5.0], [3.0, 2.0]]))
    assert_array_equal(out.data, [[3.0, 5.0]])


def test_max_over_rows_tie_gradient_goes_to_first():
    x = ad.parameter([[2.0], [2.0]])
    ad.sum_all(ad.max_over_rows(x)).backward()
    assert_array_equal(x.grad, [[1.0], [0.0]])


def test_feature_norm_standardizes_columns():
    rng = np.random.default_rng(5)
    x = ad.constant(rng.normal(2.0, 3.0, size=(10, 4)))
    gamma = ad.constant(np.ones((1, 4)))
    beta = ad.constant(np.zeros((1, 4)))
    out = ad.feature_norm(x, gamma, beta)
    assert_allclose(out.data.mean(axis=0), np.zeros(4), rtol=0, atol=1e-9)
    assert_allclose(out.data.var(axis=0), np.ones(4), rtol=0, atol=1e-6)


def test_feature_norm_single_row_is_affine_only():
    x = ad.constant([[2.0, -3.0]])
    out = ad.feature_norm(x, ad.constant([[2.0, 2.0]]), ad.constant([[1.0, 1.0]]))
    assert_array_equal(out.data, [[5.0, -5.0]])


def test_forward_values_independent_of_tape_mode():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(4, 6))
    w = rng.normal(size=(6, 3))

    def fwd():
        h = ad.leaky_relu(ad.matmul(ad.parameter(x), ad.parameter(w)), 0.2)
        return ad.softmax_rows(h).data.copy()

    with_tape = fwd()
    with ad.no_grad():
        without_tape = fwd()
    assert_array_equal(with_tape, without_tape)


def test_no_grad_blocks_backward_bookkeeping():
    w = ad.parameter([[1.0, 2.0]])
    with ad.no_grad():
        out = ad.scale(w, 3.0)
    assert not out.requires_grad
    assert out._parents == ()


def test_non_finite_input_rejected():
    with pytest.raises(NumericError):
        ad.tensor([[np.nan, 1.0]])
    with pytest.raises(NumericError):
        ad.tensor([[np.inf]])


def test_log_of_nonpositive_rejected():
    with pytest.raises(NumericError):
        ad.log(ad.constant([[0.0]]))


def test_scalar_and_vector_promotion():
    assert ad.tensor(3.0).shape == (1, 1)
    assert ad.tensor([1.0, 2.0, 3.0]).shape == (1, 3)
    with pytest.raises(DimensionError):
        ad.tensor(np.zeros((2, 2, 2)))


def test_broadcast_row_and_column():
    x = ad.constant(np.ones((3, 4)))
    row = ad.constant(np.full((1, 4), 2.0))
    col = ad.constant(np.full((3, 1), 5.0))
    assert_array_equal(ad.add(x, row).data, np.full((3, 4), 3.0))
    assert_array_equal(ad.mul(x, col).data, np.full((3, 4), 5.0))
    with pytest.raises(DimensionError):
        ad.add(x, ad.constant(np.ones((2, 5))))


def test_broadcast_gradient_reduces_to_operand_shape():
    row = ad.parameter(np.ones((1, 3)))
    x = ad.constant(np.arange(6.0).reshape(2, 3))
    ad.sum_all(ad.mul(x, row)).backward()
    assert_array_equal(row.grad, x.data.sum(axis=0, keepdims=True))


def test_fanout_accumulates_gradient():
    x = ad.parameter([[2.0]])
    y = ad.add(ad.mul(x, x), ad.scale(x, 3.0))  # x^2 + 3x, dy/dx = 2x + 3
    ad.sum_all(y).backward()
    assert_allclose(x.grad, [[7.0]], rtol=0, atol=1e-12)


def test_diamond_dag_finite_difference():
    rng = np.random.default_rng(17)
    # keep entries away from the leaky_relu kink at 0
    x0 = rng.uniform(0.2, 1.5, size=(3, 3)) * rng.choice([-1.0, 1.0], size=(3, 3))

    def f(arr):
        x = ad.parameter(arr)
        a = ad.softmax_rows(x)
        b = ad.leaky_relu(x, 0.2)
        out = ad.sum_all(ad.mul(a, b))
        return x, out

    x, out = f(x0)
    out.backward()
    h = 1e-6
    for i in range(3):
        for j in range(3):
            up = x0.copy()
            up[i, j] += h
            dn = x0.copy()
            dn[i, j] -= h
            fd = (f(up)[1].item() - f(dn)[1].item()) / (2 * h)
            assert abs(x.grad[i, j] - fd) < 1e-5 * (1 + abs(fd))


def test_backward_requires_scalar():
    with pytest.raises(DimensionError):
        ad.parameter(np.ones((2, 2))).backward()


def test_concat_cols_roundtrip_gradient():
    a = ad.parameter(np.ones((2, 2)))
    b = ad.parameter(np.ones((2, 3)))
    out = ad.concat_cols([a, b])
    assert out.shape == (2, 5)
    ad.sum_all(ad.mul(out, ad.constant(np.arange(10.0).reshape(2, 5)))).backward()
    assert_array_equal(a.grad, [[0.0, 1.0], [5.0, 6.0]])
    assert_array_equal(b.grad, [[2.0, 3.0, 4.0], [7.0, 8.0, 9.0]])


def test_masked_softmax_support_and_zeros():
    x = ad.constant([[1.0, 5.0, -2.0], [0.0, 0.0, 0.0]])
    mask = np.array([[True, False, True], [True, True, False]])
    out = ad.masked_softmax_rows(x, mask)
    assert out.data[0, 1] == 0.0
    assert out.data[1, 2] == 0.0
    assert_allclose(out.data.sum(axis=1), [1.0, 1.0], rtol=0, atol=1e-12)
    with pytest.raises(NumericError):
        ad.masked_softmax_rows(x, np.zeros_like(mask))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10_000))
def test_softmax_rows_always_stochastic(rows, cols, seed):
    x = np.random.default_rng(seed).uniform(-50, 50, size=(rows, cols))
    out = ad.softmax_rows(ad.constant(x))
    assert np.all(out.data >= 0)
    assert_allclose(out.data.sum(axis=1), np.ones(rows), rtol=0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(2, 6), st.integers(0, 10_000))
def test_row_l2_always_unit(rows, cols, seed):
    x = np.random.default_rng(seed).normal(size=(rows, cols)) + 0.1
    out = ad.row_l2_normalize(ad.constant(x))
    assert_allclose(np.linalg.norm(out.data, axis=1), np.ones(rows),
                    rtol=0, atol=1e-12)
