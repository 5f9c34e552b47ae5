import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from layer_cases import LAYER_CASES, random_case
from mucosanet.gradcheck import check_layer
from mucosanet.layers import (
    LAYER_KINDS,
    Add,
    BatchNorm,
    CacheError,
    Concat,
    Conv2D,
    Dense,
    DepthwiseConv2D,
    MaxPool2D,
    ReLU,
    SeparableConv2D,
    Softmax,
    concat_forward,
    layer_from_dict,
    maxpool2x2_forward,
    residual_add_forward,
    softmax,
)
from mucosanet.tensor import ShapeError


# --------------------------------------------------------------------------- gradients


@pytest.mark.parametrize("case", LAYER_CASES, ids=[c[0] for c in LAYER_CASES])
def test_layer_gradients_match_finite_differences(case, rng):
    _, layer, shapes, train = case
    inputs, params, buffers = random_case(layer, shapes, rng)
    errors = check_layer(layer, inputs, params, rng, train, buffers)
    assert max(errors.values()) <= 1e-6, errors


def test_every_layer_kind_has_a_gradient_case():
    covered = {c[1].kind for c in LAYER_CASES}
    assert covered == set(LAYER_KINDS)


# --------------------------------------------------------------------------- convolution


def _naive_conv(x, kernel, bias, stride=1):
    b, c, h, w = x.shape
    o, _, k, _ = kernel.shape
    ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
    y = np.zeros((b, o, ho, wo))
    for n in range(b):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    s = bias[oc]
                    for ic in range(c):
                        for di in range(k):
                            for dj in range(k):
                                s += x[n, ic, i * stride + di, j * stride + dj] * kernel[oc, ic, di, dj]
                    y[n, oc, i, j] = s
    return y


def test_conv_identity_and_box_filter():
    x = np.random.default_rng(0).standard_normal((1, 1, 5, 5))
    ident = Conv2D(1, 1, 1)
    y, _ = ident.forward({"kernel": np.ones((1, 1, 1, 1)), "bias": np.zeros(1)}, x)
    np.testing.assert_array_equal(y, x)

    box = Conv2D(1, 1, 3)
    const = np.full((1, 1, 5, 5), 0.7)
    y, _ = box.forward({"kernel": np.full((1, 1, 3, 3), 1 / 9), "bias": np.zeros(1)}, const)
    np.testing.assert_allclose(y[0, 0, 1:-1, 1:-1], 0.7, rtol=1e-12)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_matches_nested_loops(stride):
    rng = np.random.default_rng(stride)
    x = rng.standard_normal((2, 3, 5, 5))
    kernel, bias = rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)
    y, _ = Conv2D(3, 4, 3, stride, "valid").forward({"kernel": kernel, "bias": bias}, x)
    np.testing.assert_allclose(y, _naive_conv(x, kernel, bias, stride), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("k", [1, 3, 5, 7])
def test_same_padding_preserves_dims(k):
    layer = Conv2D(2, 3, k)
    x = np.zeros((1, 2, 9, 6))
    y, _ = layer.forward(layer.init_params(np.random.default_rng(0), np.float64), x)
    assert y.shape == (1, 3, 9, 6)


def test_conv_errors():
    with pytest.raises(ValueError):
        Conv2D(1, 1, 4)
    layer = Conv2D(2, 1, 3, padding="valid")
    params = layer.init_params(np.random.default_rng(0))
    with pytest.raises(ShapeError):
        layer.forward(params, np.zeros((1, 3, 5, 5)))
    with pytest.raises(ShapeError):
        layer.forward(params, np.zeros((1, 2, 2, 2)))


def test_separable_identity():
    x = np.random.default_rng(1).standard_normal((2, 3, 6, 6))
    layer = SeparableConv2D(3, 3, 3)
    dw = np.zeros((3, 1, 3, 3))
    dw[:, 0, 1, 1] = 1
    params = {"depthwise": dw, "pointwise": np.eye(3).reshape(3, 3, 1, 1), "bias": np.zeros(3)}
    y, _ = layer.forward(params, x)
    np.testing.assert_array_equal(y, x)


def test_separable_equals_full_conv_for_single_input_channel():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 1, 7, 7))
    dw, pw, bias = rng.standard_normal((1, 1, 3, 3)), rng.standard_normal((4, 1, 1, 1)), rng.standard_normal(4)
    y, _ = SeparableConv2D(1, 4, 3).forward({"depthwise": dw, "pointwise": pw, "bias": bias}, x)
    full_kernel = pw[:, :, 0, 0][:, :, None, None] * dw[0, 0][None, None]
    ref, _ = Conv2D(1, 4, 3).forward({"kernel": full_kernel, "bias": bias}, x)
    np.testing.assert_allclose(y, ref, rtol=1e-12, atol=1e-12)


def test_separable_matches_grouped_then_pointwise_composition():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 6, 6))
    dw, pw, bias = rng.standard_normal((3, 1, 3, 3)), rng.standard_normal((5, 3, 1, 1)), rng.standard_normal(5)
    y, _ = SeparableConv2D(3, 5, 3, padding="valid").forward({"depthwise": dw, "pointwise": pw, "bias": bias}, x)
    # grouped conv written as one single-channel loop per input channel
    mid = np.concatenate([_naive_conv(x[:, c : c + 1], dw[c : c + 1], np.zeros(1)) for c in range(3)], axis=1)
    ref = _naive_conv(mid, pw, bias)
    np.testing.assert_allclose(y, ref, rtol=1e-12, atol=1e-12)


def test_depthwise_matches_per_channel_loops():
    rng = np.random.default_rng(4)
    x, k, bias = rng.standard_normal((2, 3, 6, 6)), rng.standard_normal((3, 1, 3, 3)), rng.standard_normal(3)
    y, _ = DepthwiseConv2D(3, 3, 1, "valid").forward({"kernel": k, "bias": bias}, x)
    ref = np.concatenate([_naive_conv(x[:, c : c + 1], k[c : c + 1], bias[c : c + 1]) for c in range(3)], axis=1)
    np.testing.assert_allclose(y, ref, rtol=1e-12, atol=1e-12)


# --------------------------------------------------------------------------- pooling


def test_maxpool_examples():
    y, _ = maxpool2x2_forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    assert y.tolist() == [[[[4.0]]]]
    y, _ = maxpool2x2_forward(np.full((1, 2, 6, 4), 3.0))
    assert y.shape == (1, 2, 3, 2) and np.all(y == 3.0)


def test_maxpool_matches_window_scan_and_truncates_odd():
    rng = np.random.default_rng(5)
    for h, w in [(4, 6), (5, 7)]:
        x = rng.standard_normal((1, 1, h, w))
        y, _ = maxpool2x2_forward(x)
        ref = np.array([[x[0, 0, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].max() for j in range(w // 2)] for i in range(h // 2)])
        np.testing.assert_array_equal(y[0, 0], ref)


def test_maxpool_backward_routes_to_single_winner():
    rng = np.random.default_rng(6)
    layer = MaxPool2D()
    x = rng.standard_normal((2, 3, 6, 6))
    x[0, 0, :2, :2] = 5.0  # four-way tie
    y, cache = layer.forward({}, x)
    (dx,), _ = layer.backward({}, cache, np.ones_like(y))
    windows = dx.reshape(2, 3, 3, 2, 3, 2).transpose(0, 1, 2, 4, 3, 5).reshape(2, 3, 3, 3, 4)
    assert np.all((windows != 0).sum(axis=-1) == 1)
    assert dx[0, 0, 0, 0] == 1 and dx[0, 0, 0, 1] == dx[0, 0, 1, 0] == dx[0, 0, 1, 1] == 0
    xw = x.reshape(2, 3, 3, 2, 3, 2).transpose(0, 1, 2, 4, 3, 5).reshape(2, 3, 3, 3, 4)
    np.testing.assert_array_equal(windows.argmax(-1), xw.argmax(-1))


def test_same_maxpool_keeps_size():
    y, _ = MaxPool2D(3, 1, same=True).forward({}, np.random.default_rng(0).standard_normal((1, 2, 5, 5)))
    assert y.shape == (1, 2, 5, 5)


# --------------------------------------------------------------------------- batchnorm


def test_batchnorm_train_statistics():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((4, 3, 5, 5)) * 3 + 2
    bn = BatchNorm(3)
    buffers = bn.init_buffers(np.float64)
    y, _ = bn.forward(bn.init_params(rng, np.float64), x, train=True, buffers=buffers)
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0, atol=1e-4)
    np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1, atol=1e-4)
    y2, _ = bn.forward({"gamma": np.full(3, 2.0), "beta": np.full(3, 3.0)}, x, train=True, buffers=buffers)
    np.testing.assert_allclose(y2.mean(axis=(0, 2, 3)), 3, atol=1e-4)
    np.testing.assert_allclose(y2.std(axis=(0, 2, 3)), 2, atol=1e-4)


def test_batchnorm_running_stats_and_infer_identity():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((4, 2, 3, 3)) + 5
    bn = BatchNorm(2)
    params, buffers = bn.init_params(rng, np.float64), bn.init_buffers(np.float64)
    y, _ = bn.forward(params, x, train=False, buffers=buffers)
    np.testing.assert_allclose(y, x / np.sqrt(1 + 1e-5), rtol=1e-12)
    bn.forward(params, x, train=True, buffers=buffers)
    np.testing.assert_allclose(buffers["running_mean"], 0.1 * x.mean(axis=(0, 2, 3)), rtol=1e-12)
    np.testing.assert_allclose(buffers["running_var"], 0.9 + 0.1 * x.var(axis=(0, 2, 3)), rtol=1e-12)
    assert np.all(buffers["running_var"] > 0)
    with pytest.raises(ShapeError):
        bn.forward(params, np.zeros((0, 2, 3, 3)), buffers=buffers)
    with pytest.raises(ShapeError):
        bn.forward(params, np.zeros((1, 3, 3, 3)), buffers=buffers)


# --------------------------------------------------------------------------- dense, activations, merges


def test_softmax_examples():
    np.testing.assert_allclose(softmax(np.zeros((1, 8))), 0.125)
    y, _ = Softmax().forward({}, np.array([[1000.0, 0.0]]))
    assert np.isfinite(y).all() and y[0, 0] == 1.0


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 10)), elements=st.floats(-50, 50)),
    st.floats(-100, 100),
)
def test_softmax_shift_invariant_positive_and_normalised(x, c):
    y = softmax(x)
    np.testing.assert_allclose(softmax(x + c), y, atol=1e-6)
    assert np.all(y > 0)
    np.testing.assert_allclose(y.sum(axis=1), 1, atol=1e-6)


def test_relu_forward_backward_example():
    relu = ReLU()
    y, cache = relu.forward({}, np.array([-1.0, 2.0]))
    assert y.tolist() == [0, 2]
    (dx,), _ = relu.backward({}, cache, np.array([1.0, 1.0]))
    assert dx.tolist() == [0, 1]


def test_dense_identity_backward():
    layer = Dense(3, 3)
    params = {"weight": np.eye(3), "bias": np.zeros(3)}
    x = np.arange(6.0).reshape(2, 3)
    y, cache = layer.forward(params, x)
    np.testing.assert_array_equal(y, x)
    g = np.random.default_rng(0).standard_normal((2, 3))
    (dx,), _ = layer.backward(params, cache, g)
    np.testing.assert_array_equal(dx, g)
    with pytest.raises(ShapeError):
        layer.forward(params, np.zeros((2, 4)))


def test_add_and_concat():
    x = np.random.default_rng(0).standard_normal((2, 3, 4, 4))
    y, _ = residual_add_forward(x, np.zeros_like(x))
    np.testing.assert_array_equal(y, x)
    y, _ = concat_forward([np.zeros((1, 3, 2, 2)), np.ones((1, 5, 2, 2))])
    assert y.shape == (1, 8, 2, 2)
    with pytest.raises(ShapeError):
        Add().forward({}, np.zeros((1, 2, 2, 2)), np.zeros((1, 3, 2, 2)))
    with pytest.raises(ShapeError):
        Concat(2).forward({}, np.zeros((1, 2, 2, 2)), np.zeros((1, 2, 3, 2)))


def test_residual_with_zero_conv_is_identity():
    x = np.random.default_rng(0).standard_normal((1, 4, 5, 5))
    conv = Conv2D(4, 4, 3)
    f_x, _ = conv.forward({"kernel": np.zeros((4, 4, 3, 3)), "bias": np.zeros(4)}, x)
    y, _ = residual_add_forward(x, f_x)
    np.testing.assert_array_equal(y, x)


# --------------------------------------------------------------------------- caches & serialisation


def test_cache_from_other_layer_rejected():
    relu = ReLU()
    _, cache = relu.forward({}, np.ones((1, 3)))
    with pytest.raises(CacheError):
        Softmax().backward({}, cache, np.ones((1, 3)))
    with pytest.raises(CacheError):
        ReLU().backward({}, cache, np.ones((1, 3)))  # equal spec, different instance
    cache.valid = False
    with pytest.raises(CacheError):
        relu.backward({}, cache, np.ones((1, 3)))


@pytest.mark.parametrize("case", LAYER_CASES, ids=[c[0] for c in LAYER_CASES])
def test_layer_dict_round_trip(case):
    layer = case[1]
    assert layer_from_dict(layer.to_dict()) == layer
