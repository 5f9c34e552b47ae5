import json
import math
from pathlib import Path

import numpy as np
import pytest

from mucosanet.architectures import (
    ARCHITECTURES,
    BACKBONES,
    build_head,
    build_inception_block,
    build_model,
    build_resnet_block,
    build_vgg,
    build_xception_block,
    main_path_weighted_layers,
    resnet34_shape,
    vgg19_shape,
)
from mucosanet.gradcheck import check_model, numeric_grad, randomize_classifier, relative_error
from mucosanet.graph import INPUT, ModelGraph
from mucosanet.layers import Conv2D, Dense, Flatten, ReLU
from mucosanet.optim import cross_entropy
from mucosanet.tensor import ShapeError

GOLDEN = json.loads((Path(__file__).parent / "golden" / "param_counts.json").read_text())


@pytest.mark.parametrize("arch", ARCHITECTURES)
@pytest.mark.parametrize("width", [1, 2])
def test_parameter_counts_match_golden(arch, width):
    entry = GOLDEN[f"{arch}/width{width}"]
    assert BACKBONES[arch](128, width).parameter_count() == entry["backbone"]
    assert build_model(arch, 8, 128, width, seed=None).parameter_count() == entry["model"]


def test_vgg_mini_count_by_hand():
    convs = [(3, 8), (8, 16), (16, 32), (32, 32), (32, 32), (32, 32)]
    backbone = sum(o * i * 9 + o for i, o in convs)
    head = 2 * 3 + (128 * 32 + 128) + (128 * 8 * 8 * 512 + 512) + (512 * 8 + 8)
    assert build_model("vgg_mini", seed=None).parameter_count() == backbone + head


def test_vgg19_inventory():
    g = vgg19_shape(224)
    assert g.count("Conv2D") == 16
    assert g.count("MaxPool2D") == 5
    assert g.output_shape == (1, 512, 7, 7)
    # the widely published VGG19 total with its three dense layers
    assert vgg19_shape(224, include_top=True).parameter_count() == 143_667_240
    assert build_vgg("vgg19_shape").count("Conv2D") == 16
    with pytest.raises(ValueError):
        vgg19_shape(200)


def test_resnet34_layer_count():
    g = resnet34_shape(224, include_top=True)
    assert main_path_weighted_layers(g) == 34
    assert g.count("Add") == 16
    assert resnet34_shape(224).output_shape == (1, 512, 7, 7)


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_mini_forward_shapes_and_probabilities(arch):
    model = build_model(arch, seed=0)
    assert model.shape_of(model.node("head.conv").inputs[0])[2:] == (8, 8)
    assert model.params["head.fc1.weight"].shape == (8192, 512)
    x = np.random.default_rng(0).random((2, 3, 128, 128), dtype=np.float32)
    y = model.forward(x)
    assert y.shape == (2, 8) and np.isfinite(y).all()
    np.testing.assert_allclose(y.sum(axis=1), 1, atol=1e-6)


@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_untrained_model_predicts_uniform(arch):
    model = build_model(arch, seed=1)
    x = np.random.default_rng(1).random((4, 3, 128, 128), dtype=np.float32)
    y = np.eye(8)[[0, 3, 5, 7]]
    assert cross_entropy(y, model.forward(x)).mean == pytest.approx(math.log(8), abs=1e-6)


def test_parameter_names_are_hierarchical_and_unique():
    model = build_model("resnet_mini", seed=0)
    names = list(model.params)
    assert len(names) == len(set(names))
    assert "backbone.block1.conv0.kernel" in names
    assert names[0] == "input_bn.gamma"
    assert "input_bn.running_mean" in model.buffers
    assert names[-1] == "head.fc2.bias"


def test_head_rejects_flat_backbone():
    g = ModelGraph((3, 4, 4))
    g.add_node("flat", Flatten(), (INPUT,))
    with pytest.raises(ValueError):
        build_head(g)


def test_width_and_divisibility_checks():
    with pytest.raises(ValueError):
        build_model("vgg_mini", input_size=100)
    with pytest.raises(ValueError):
        build_model("vgg_mini", width=0)
    with pytest.raises(ValueError):
        build_model("alexnet")


def test_graph_rejects_bad_wiring():
    g = ModelGraph((1, 4, 4))
    g.add_node("a", ReLU(), (INPUT,))
    with pytest.raises(ValueError):
        g.add_node("a", ReLU(), (INPUT,))
    with pytest.raises(ValueError):
        g.add_node("b", ReLU(), ("later",))
    with pytest.raises(ShapeError):
        g.add_node("c", Dense(3, 2), ("a",))
    with pytest.raises(ShapeError):
        g.add_node("d", Conv2D(2, 2), ("a",))


def test_topology_round_trip():
    model = build_model("inception_mini", seed=None)
    rebuilt = ModelGraph.from_topology(model.input_shape, model.topology(), model.descriptor)
    assert rebuilt.topology() == model.topology()
    assert rebuilt.param_spec() == model.param_spec()


# --------------------------------------------------------------------------- blocks


def _block_params_zero(g: ModelGraph, keep=()):
    for name in g.params:
        if not name.startswith(keep):
            g.params[name][...] = 0


def test_inception_block_counts_and_channels():
    g = build_inception_block(16, (16, 24, 8, 8)).initialize(0, np.float64)
    assert g.output_shape == (1, 56, 16, 16)
    assert g.count("Conv2D") == 6 and g.count("MaxPool2D") == 1


def test_xception_block_zero_stack_is_projection():
    g = build_xception_block(8, 8, spatial=6).initialize(0, np.float64)
    _block_params_zero(g, keep=("block.shortcut",))
    x = np.random.default_rng(0).standard_normal((2, 8, 6, 6))
    y = g.forward(x)
    assert y.shape == x.shape
    proj, _ = Conv2D(8, 8, 1).forward({"kernel": g.params["block.shortcut.kernel"], "bias": g.params["block.shortcut.bias"]}, x)
    np.testing.assert_allclose(y, proj, rtol=1e-12, atol=1e-12)


def test_resnet_block_zero_convs_is_relu_identity():
    g = build_resnet_block(4, 4, spatial=5).initialize(0, np.float64)
    _block_params_zero(g)
    x = np.random.default_rng(1).standard_normal((2, 4, 5, 5))
    np.testing.assert_array_equal(g.forward(x), np.maximum(x, 0))
    assert build_resnet_block(4, 8, spatial=5).count("Conv2D") == 3  # projection shortcut


@pytest.mark.parametrize(
    "builder",
    [
        lambda: build_inception_block(4, (4, 6, 2, 2), spatial=6),
        lambda: build_xception_block(4, 6, spatial=6),
        lambda: build_resnet_block(4, 4, spatial=6),
        lambda: build_resnet_block(3, 5, spatial=6),
    ],
    ids=["inception", "xception", "resnet", "resnet_projection"],
)
def test_block_gradients(builder, rng):
    g = builder().initialize(3, np.float64)
    x = rng.standard_normal((2,) + g.input_shape)
    w = rng.standard_normal(g.forward(x).shape)
    g.forward(x, train=True)
    gx, grads = g.backward(w)

    def f():
        return float((g.forward(x, train=True) * w).sum())

    assert relative_error(gx, numeric_grad(f, x)) <= 1e-6
    for name, p in g.params.items():
        assert relative_error(grads[name], numeric_grad(f, p)) <= 1e-6, name


def test_unfused_model_gradient(rng):
    model = build_model("xception_mini", input_size=32, seed=2).astype(np.float64)
    x = rng.random((2, 3, 32, 32))
    randomize_classifier(model, x, rng)
    errors = check_model(model, x, np.eye(8)[[1, 6]], rng, fused=False)
    assert max(errors.values()) <= 1e-6, max(errors, key=errors.get)
