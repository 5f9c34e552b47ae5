import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mucosanet.tensor import DomainError, ShapeError, elementwise, full, matmul, ones, reduce, reshape, zeros


def test_constant_fills():
    assert zeros([2, 2]).tolist() == [[0, 0], [0, 0]]
    assert full([3], 0.5).tolist() == [0.5, 0.5, 0.5]
    assert ones([1]).tolist() == [1]
    assert zeros([2]).dtype == np.float32
    assert ones([2], dtype=np.float64).dtype == np.float64


@pytest.mark.parametrize("shape", [[0], [2, -1], []])
def test_bad_shapes_rejected(shape):
    with pytest.raises(ShapeError):
        zeros(shape)


def test_elementwise_examples():
    assert elementwise("max", np.array([1, 5]), np.array([4, 2])).tolist() == [4, 5]
    assert elementwise("sqrt", np.array([4.0, 9.0])).tolist() == [2, 3]
    assert elementwise("ln", np.array([math.e]))[0] == pytest.approx(1.0, abs=1e-15)
    assert elementwise("add", np.array([1.0, 2.0]), 1.0).tolist() == [2, 3]


def test_elementwise_errors():
    with pytest.raises(ShapeError):
        elementwise("add", np.ones(2), np.ones(3))
    with pytest.raises(DomainError):
        elementwise("ln", np.array([1.0, 0.0]))
    with pytest.raises(DomainError):
        elementwise("ln", np.array([-2.0]))
    with pytest.raises(ValueError):
        elementwise("pow", np.ones(2), 2)


def test_matmul_examples():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), m), m)
    assert matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]])).tolist() == [[11.0]]
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def _naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 16), st.integers(1, 16), st.integers(1, 16), st.integers(0, 2**31))
def test_matmul_matches_triple_loop(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((m, k)), rng.standard_normal((k, n))
    # small dims: compare with a tolerance far below any real error
    np.testing.assert_allclose(matmul(a, b), _naive_matmul(a, b), rtol=1e-12, atol=1e-12)


def test_reduce_examples():
    assert reduce("sum", np.array([1, 2, 3])) == 6
    assert reduce("argmax", np.array([0.1, 0.7, 0.7, 0.1])) == 1
    assert reduce("mean", np.ones(16)) == 1
    assert reduce("argmax", np.array([[1, 3, 3], [2, 2, 0]]), axis=1).tolist() == [1, 0]
    with pytest.raises(ShapeError):
        reduce("sum", np.ones((2, 2)), axis=2)


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(-1e6, 1e6)))
def test_reshape_preserves_data_and_max_idempotent(a):
    r = reshape(a, [a.size])
    assert np.array_equal(r, a.ravel())
    assert np.array_equal(elementwise("max", a, a), a)
    with pytest.raises(ShapeError):
        reshape(a, [a.size + 1])
