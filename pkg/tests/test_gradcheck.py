"""The checker itself must notice small backward errors."""
import numpy as np
import pytest

from mucosanet.architectures import build_model
from mucosanet.gradcheck import check_layer, check_model, numeric_grad, randomize_classifier, relative_error
from mucosanet.layers import BatchNorm, Conv2D, Dense


def test_relative_error_basics():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == 0.0
    assert relative_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)


def test_numeric_grad_of_known_function():
    x = np.array([0.3, -1.2, 2.0])
    g = numeric_grad(lambda: float((x**3).sum()), x)
    np.testing.assert_allclose(g, 3 * x**2, rtol=1e-8)
    assert (x == [0.3, -1.2, 2.0]).all()


def _scaled_backward(cls, key, factor):
    original = cls.backward

    def backward(self, params, cache, grad_out):
        grads_in, grads = original(self, params, cache, grad_out)
        if key == "input":
            grads_in = [grads_in[0] * factor] + list(grads_in[1:])
        else:
            grads = dict(grads, **{key: grads[key] * factor})
        return grads_in, grads

    return backward


@pytest.mark.parametrize("cls,layer,shape,key", [
    (Conv2D, Conv2D(2, 3, 3), (2, 2, 5, 5), "kernel"),
    (Conv2D, Conv2D(2, 3, 3), (2, 2, 5, 5), "input"),
    (Dense, Dense(4, 3), (3, 4), "bias"),
    (BatchNorm, BatchNorm(3), (4, 3, 2, 2), "gamma"),
])
def test_layer_check_catches_one_percent_error(monkeypatch, rng, cls, layer, shape, key):
    x = rng.standard_normal(shape)
    params = {k: rng.standard_normal(v) for k, v in layer.param_shapes().items()}
    buffers = layer.init_buffers(np.float64)
    assert max(check_layer(layer, [x], params, rng, buffers=buffers).values()) <= 1e-6
    monkeypatch.setattr(cls, "backward", _scaled_backward(cls, key, 1.0001))
    errors = check_layer(layer, [x], params, rng, buffers=buffers)
    assert max(errors.values()) > 1e-6


def test_model_check_catches_small_error(monkeypatch, rng):
    model = build_model("vgg_mini", input_size=32, seed=0).astype(np.float64)
    x = rng.random((1, 3, 32, 32))
    y = np.eye(8)[[2]]
    randomize_classifier(model, x, rng)
    assert max(check_model(model, x, y, rng).values()) <= 1e-6
    monkeypatch.setattr(Conv2D, "backward", _scaled_backward(Conv2D, "kernel", 1.0001))
    errors = check_model(model, x, y, rng)
    assert max(v for k, v in errors.items() if k.endswith("kernel")) > 1e-6
