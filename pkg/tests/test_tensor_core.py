import numpy as np
import pytest

from conftest import gemm_oracle
from ftgemm.tensor_core import (
    OpCounter,
    ShapeError,
    apply_activation,
    col_sums,
    gelu,
    gemm,
    layernorm_rows,
    row_sums,
    softmax_rows,
    total_sum,
)


def test_gemm_2x2_example(small_product):
    _, _, C = small_product
    np.testing.assert_array_equal(C, np.array([[19, 22], [43, 50]], np.float32))


def test_gemm_identity():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((3, 3)).astype(np.float32)
    np.testing.assert_array_equal(gemm(A, np.eye(3, dtype=np.float32)), A)


def test_gemm_zero_matrix():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((4, 5)).astype(np.float32)
    np.testing.assert_array_equal(gemm(A, np.zeros((5, 2), np.float32)), np.zeros((4, 2)))


def test_gemm_shape_mismatch():
    with pytest.raises(ShapeError):
        gemm(np.ones((2, 3), np.float32), np.ones((4, 2), np.float32))


@pytest.mark.parametrize("seed", range(5))
def test_gemm_matches_triple_loop_bit_exactly(seed):
    rng = np.random.default_rng(seed)
    m, k, n = rng.integers(1, 12, size=3)
    A = rng.uniform(-1, 1, (m, k)).astype(np.float32)
    B = rng.uniform(-1, 1, (k, n)).astype(np.float32)
    np.testing.assert_array_equal(gemm(A, B), gemm_oracle(A, B))


def test_gemm_bilinearity():
    rng = np.random.default_rng(7)
    A = rng.uniform(-1, 1, (8, 8)).astype(np.float32)
    B1 = rng.uniform(-1, 1, (8, 8)).astype(np.float32)
    B2 = rng.uniform(-1, 1, (8, 8)).astype(np.float32)
    lhs = gemm(A, (B1 + B2).astype(np.float32))
    rhs = gemm(A, B1) + gemm(A, B2)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-4, atol=1e-5)


def test_gemm_counter_exactness():
    c = OpCounter()
    gemm(np.ones((3, 5), np.float32), np.ones((5, 7), np.float32), c)
    assert c.workload_mults == 3 * 5 * 7
    assert c.workload_adds == 3 * 4 * 7
    assert c.abft_mults == 0


def test_counter_merge():
    a = OpCounter(1, 2, 3, 4, 5)
    b = OpCounter(10, 20, 30, 40, 50)
    a.merge(b)
    assert (a.workload_mults, a.workload_adds, a.abft_mults, a.abft_adds,
            a.abft_comparisons) == (11, 22, 33, 44, 55)


def test_softmax_constant_row():
    out = softmax_rows(np.full((1, 4), 3.25, np.float32))
    np.testing.assert_allclose(out, 0.25, atol=1e-7)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(3)
    X = rng.uniform(-5, 5, (6, 9)).astype(np.float32)
    out = softmax_rows(X)
    assert (out >= 0).all()
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)


def test_gelu_zero():
    assert gelu(np.zeros((1, 1), np.float32))[0, 0] == 0.0


def test_layernorm_row_stats():
    row = np.array([[1.0, 2.0, 3.0]], np.float32)
    out = layernorm_rows(row, np.ones(3, np.float32), np.zeros(3, np.float32))
    assert abs(out.mean()) < 1e-5
    assert abs(out.var() - 1.0) < 1e-5


def test_activation_nan_propagates():
    X = np.array([[np.nan, 1.0, 2.0]], np.float32)
    assert np.isnan(softmax_rows(X)).any()
    assert np.isnan(apply_activation(X, "gelu")).any()


def test_apply_activation_unknown_kind():
    with pytest.raises(ValueError):
        apply_activation(np.ones((1, 1), np.float32), "relu")


def test_sums_example(small_product):
    _, _, C = small_product
    np.testing.assert_array_equal(row_sums(C), [41, 93])
    np.testing.assert_array_equal(col_sums(C), [62, 72])
    assert total_sum(C) == 134.0


def test_sums_trivial_cases():
    Z = np.zeros((3, 4), np.float32)
    assert total_sum(Z) == 0.0
    assert (row_sums(Z) == 0).all() and (col_sums(Z) == 0).all()
    one = np.array([[2.5]], np.float32)
    assert total_sum(one) == 2.5
    assert row_sums(one)[0] == 2.5 and col_sums(one)[0] == 2.5


def test_sums_consistency_and_counting():
    rng = np.random.default_rng(5)
    X = rng.uniform(-1, 1, (17, 13)).astype(np.float32)
    t = total_sum(X)
    assert abs(t - row_sums(X).sum()) < 1e-9 * max(1, abs(t))
    assert abs(t - col_sums(X).sum()) < 1e-9 * max(1, abs(t))
    c = OpCounter()
    row_sums(X, c)
    assert c.abft_adds == 17 * 12
    col_sums(X, c)
    assert c.abft_adds == 17 * 12 + 13 * 16
    total_sum(X, c)
    assert c.abft_adds == 17 * 12 + 13 * 16 + 17 * 13 - 1
