import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relprop import numerics as nx
from relprop.errors import ShapeError


def test_dense_identity():
    np.testing.assert_array_equal(nx.dense_forward([1, 2], np.eye(2), [0, 0]), [1, 2])


def test_dense_hand_example():
    # 1*2 + 1*(-1)
    np.testing.assert_array_equal(nx.dense_forward([1, 1], [[2], [-1]], [0]), [1])


def test_dense_zero_input_passes_bias():
    w = np.random.default_rng(0).normal(size=(2, 2))
    np.testing.assert_array_equal(nx.dense_forward([0, 0], w, [3, 4]), [3, 4])


def test_dense_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(3,\).*\(2, 2\)"):
        nx.dense_forward([1, 2, 3], np.eye(2), [0, 0])


def test_dense_left_to_right_summation():
    # 1e16 + 1 - 1e16 is 0 left to right, 1 with any pairwise/compensated order
    x = np.array([1e16, 1.0, -1e16])
    out = nx.dense_forward(x, np.ones((3, 1)), [0.0])
    assert out[0] == ((1e16 + 1.0) + -1e16)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_dense_linear_without_bias(seed, a, b):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 10, size=2)
    w = rng.normal(size=(n, m))
    x, y = rng.normal(size=n), rng.normal(size=n)
    zero = np.zeros(m)
    lhs = nx.dense_forward(a * x + b * y, w, zero)
    rhs = a * nx.dense_forward(x, w, zero) + b * nx.dense_forward(y, w, zero)
    scale = np.abs(a) * np.abs(x) @ np.abs(w) + np.abs(b) * np.abs(y) @ np.abs(w) + 1e-300
    assert np.all(np.abs(lhs - rhs) <= 1e-12 * scale)


def test_conv_all_ones():
    spec = nx.ConvSpec(np.ones((1, 1, 2, 2)), np.zeros(1))
    np.testing.assert_array_equal(nx.conv_forward(np.ones((1, 3, 3)), spec), np.full((1, 2, 2), 4.0))


def test_conv_identity_kernel_is_exact_identity():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 5, 4))
    spec = nx.ConvSpec(np.ones((1, 1, 1, 1)), np.zeros(1))
    out = nx.conv_forward(x, spec)
    assert np.array_equal(out, x)


def test_conv_diagonal_kernel():
    spec = nx.ConvSpec(np.array([[[[1, 0], [0, 1]]]]), np.zeros(1))
    np.testing.assert_array_equal(nx.conv_forward([[[1, 2], [3, 4]]], spec), [[[5]]])


def test_conv_invalid_extent():
    spec = nx.ConvSpec(np.ones((1, 1, 4, 4)), np.zeros(1))
    with pytest.raises(ShapeError):
        nx.conv_forward(np.ones((1, 3, 3)), spec)


def test_conv_matches_materialized_dense():
    rng = np.random.default_rng(2)
    for stride, pad in [(1, 0), (2, 1), ((1, 2), (0, 1))]:
        spec = nx.ConvSpec(rng.normal(size=(3, 2, 2, 3)), rng.normal(size=3), stride, pad)
        x = rng.normal(size=(2, 5, 6))
        w, b = nx.conv_as_dense(spec, x.shape)
        dense = nx.dense_forward(x.reshape(-1), w, b)
        np.testing.assert_allclose(nx.conv_forward(x, spec).reshape(-1), dense, rtol=1e-12, atol=1e-12)


def test_conv_transpose_is_adjoint():
    rng = np.random.default_rng(3)
    spec = nx.ConvSpec(rng.normal(size=(2, 3, 3, 2)), np.zeros(2), (2, 1), (1, 0))
    x = rng.normal(size=(3, 6, 5))
    out_shape = spec.output_shape(x.shape)
    s = rng.normal(size=out_shape)
    lhs = np.sum(nx.conv_linear(x, spec.kernel, spec.stride, spec.padding, out_shape[1:]) * s)
    rhs = np.sum(x * nx.conv_linear_transpose(s, spec.kernel, spec.stride, spec.padding, x.shape))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_max_pool():
    out, arg = nx.pool_forward([[[1, 2], [3, 4]]], "max", 2, 2)
    np.testing.assert_array_equal(out, [[[4]]])
    assert arg[0, 0, 0] == 3


def test_avg_pool():
    out, arg = nx.pool_forward([[[1, 2], [3, 4]]], "avg", 2, 2)
    np.testing.assert_array_equal(out, [[[2.5]]])
    assert arg is None


def test_max_pool_constant_input_ties_to_first():
    out, arg = nx.pool_forward(np.full((2, 4, 4), 7.0), "max", 2, 2)
    assert np.all(out == 7.0)
    assert np.all(arg == 0)


def test_pool_window_too_large():
    with pytest.raises(ShapeError):
        nx.pool_forward(np.ones((1, 2, 2)), "max", 3, 1)


def test_argmax_to_input_index():
    x = np.arange(16.0).reshape(1, 4, 4)
    out, arg = nx.pool_forward(x, "max", 2, 2)
    idx = nx.argmax_to_input_index(arg, x.shape, 2, 2)
    np.testing.assert_array_equal(x.reshape(-1)[idx], out)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_avg_pool_equals_constant_kernel_conv(seed):
    rng = np.random.default_rng(seed)
    c, kh, kw = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
    s = (int(rng.integers(1, 3)), int(rng.integers(1, 3)))
    x = rng.normal(size=(c, kh + rng.integers(0, 5), kw + rng.integers(0, 5)))
    pooled, _ = nx.pool_forward(x, "avg", (kh, kw), s)
    conv = nx.conv_forward(x, nx.ConvSpec(nx.avg_pool_kernel(c, (kh, kw)), np.zeros(c), s))
    np.testing.assert_allclose(pooled, conv, rtol=1e-12, atol=1e-12 * np.abs(x).max())


def test_relu():
    np.testing.assert_array_equal(nx.relu_forward([-1, 0, 2]), [0, 0, 2])
    assert np.all(nx.relu_forward(-np.arange(1, 5.0)) == 0)
    x = np.abs(np.random.default_rng(4).normal(size=7))
    np.testing.assert_array_equal(nx.relu_forward(x), x)


def test_frozen_tensor_is_read_only():
    t = nx.frozen(np.zeros(3))
    with pytest.raises(ValueError):
        t[0] = 1.0
