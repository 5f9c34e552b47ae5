"""Backbone families and the classification head.

The ``*_mini`` builders are the trainable desk-scale variants (four 2x2 pools,
so a 128x128 input reaches an 8x8 feature map). ``vgg19_shape`` and
``resnet34_shape`` reproduce the full layer inventories for shape checks only;
their parameters are never allocated unless ``initialize`` is called.
"""
from __future__ import annotations

from typing import Sequence

from .graph import INPUT, GraphBuilder, ModelGraph
from .layers import Add, BatchNorm, Concat, Conv2D, Dense, Flatten, MaxPool2D, ReLU, SeparableConv2D, Softmax

ARCHITECTURES = ("vgg_mini", "inception_mini", "xception_mini", "resnet_mini")
HEAD_FILTERS = 128
HEAD_HIDDEN = 512
BASE = 8


def _conv_relu(b: GraphBuilder, name: str, src: str, cin: int, cout: int, k: int = 3, stride: int = 1) -> str:
    b.add(name, Conv2D(cin, cout, k, stride), src)
    return b.add(f"{name}_relu", ReLU())


# --------------------------------------------------------------------------- blocks


def inception_block(
    b: GraphBuilder,
    src: str,
    in_ch: int,
    branches: Sequence[int],
    reductions: Sequence[int] | None = None,
) -> tuple[str, int]:
    """Four-branch block: 1x1 | 1x1->3x3 | 1x1->5x5 | 3x3 pool->1x1.

    Six convolutions and one stride-1 pool; spatial size is preserved.
    Returns the output node name and its channel count.
    """
    c1, c3, c5, cp = branches
    r3, r5 = reductions or (max(1, c3 // 2), max(1, c5 // 2))
    out1 = _conv_relu(b, "b1x1", src, in_ch, c1, 1)
    _conv_relu(b, "b3x3_reduce", src, in_ch, r3, 1)
    out3 = _conv_relu(b, "b3x3", b.graph.last, r3, c3, 3)
    _conv_relu(b, "b5x5_reduce", src, in_ch, r5, 1)
    out5 = _conv_relu(b, "b5x5", b.graph.last, r5, c5, 5)
    b.add("pool", MaxPool2D(3, 1, same=True), src)
    outp = _conv_relu(b, "pool_proj", b.graph.last, in_ch, cp, 1)
    return b.add("concat", Concat(4), out1, out3, out5, outp), c1 + c3 + c5 + cp


def xception_block(b: GraphBuilder, src: str, in_ch: int, out_ch: int) -> str:
    """Separable-conv stack with a 1x1-projected shortcut added to its output."""
    b.add("relu0", ReLU(), src)
    b.add("sep0", SeparableConv2D(in_ch, out_ch, 3))
    b.add("relu1", ReLU())
    stack = b.add("sep1", SeparableConv2D(out_ch, out_ch, 3))
    shortcut = b.add("shortcut", Conv2D(in_ch, out_ch, 1), src)
    return b.add("add", Add(), stack, shortcut)


def resnet_block(b: GraphBuilder, src: str, in_ch: int, out_ch: int, stride: int = 1) -> str:
    """Two 3x3 convs plus a shortcut (identity, or 1x1 projection on shape change)."""
    _conv_relu(b, "conv0", src, in_ch, out_ch, 3, stride)
    body = b.add("conv1", Conv2D(out_ch, out_ch, 3))
    if in_ch == out_ch and stride == 1:
        shortcut = src
    else:
        shortcut = b.add("shortcut", Conv2D(in_ch, out_ch, 1, stride), src)
    b.add("add", Add(), body, shortcut)
    return b.add("relu", ReLU())


def _standalone(block, in_ch: int, spatial: int, *args) -> ModelGraph:
    g = ModelGraph((in_ch, spatial, spatial), {"architecture": block.__name__})
    block(GraphBuilder(g, "block."), INPUT, in_ch, *args)
    return g


def build_inception_block(in_ch: int, branch_channels: Sequence[int], spatial: int = 16) -> ModelGraph:
    return _standalone(inception_block, in_ch, spatial, branch_channels)


def build_xception_block(in_ch: int, out_ch: int, spatial: int = 16) -> ModelGraph:
    return _standalone(xception_block, in_ch, spatial, out_ch)


def build_resnet_block(in_ch: int, out_ch: int, spatial: int = 16) -> ModelGraph:
    return _standalone(resnet_block, in_ch, spatial, out_ch)


# --------------------------------------------------------------------------- backbones


def _backbone(kind: str, input_size: int, width: int) -> tuple[ModelGraph, GraphBuilder]:
    if width < 1:
        raise ValueError("width multiplier must be >= 1")
    g = ModelGraph((3, input_size, input_size), {"architecture": kind, "width": width, "input_size": input_size})
    return g, GraphBuilder(g, "backbone.")


def _check_divisible(input_size: int, pools: int):
    if input_size % (2**pools):
        raise ValueError(f"input size {input_size} must be divisible by {2 ** pools}")


def vgg_mini(input_size: int = 128, width: int = 1) -> ModelGraph:
    _check_divisible(input_size, 4)
    g, b = _backbone("vgg_mini", input_size, width)
    cin, src = 3, INPUT
    for stage, (c, n) in enumerate([(BASE, 1), (2 * BASE, 1), (4 * BASE, 2), (4 * BASE, 2)]):
        s = b.scope(f"block{stage + 1}")
        for i in range(n):
            src = _conv_relu(s, f"conv{i}", src, cin, c * width)
            cin = c * width
        src = s.add("pool", MaxPool2D())
    return g


def inception_mini(input_size: int = 128, width: int = 1) -> ModelGraph:
    """Three stem convs, four pools and three inception blocks."""
    _check_divisible(input_size, 4)
    g, b = _backbone("inception_mini", input_size, width)
    w = width
    _conv_relu(b, "conv0", INPUT, 3, BASE * w)
    b.add("pool0", MaxPool2D())
    _conv_relu(b, "conv1", g.last, BASE * w, 2 * BASE * w)
    b.add("pool1", MaxPool2D())
    src = _conv_relu(b, "conv2", g.last, 2 * BASE * w, 2 * BASE * w)
    src, c = inception_block(b.scope("block1"), src, 2 * BASE * w, [x * w for x in (8, 8, 4, 4)])
    src = b.add("pool2", MaxPool2D(), src)
    src, c = inception_block(b.scope("block2"), src, c, [x * w for x in (8, 12, 6, 6)])
    src, c = inception_block(b.scope("block3"), src, c, [x * w for x in (8, 12, 6, 6)])
    b.add("pool3", MaxPool2D(), src)
    return g


def xception_mini(input_size: int = 128, width: int = 1) -> ModelGraph:
    _check_divisible(input_size, 4)
    g, b = _backbone("xception_mini", input_size, width)
    w = width
    _conv_relu(b, "stem", INPUT, 3, BASE * w)
    src = b.add("stem_pool", MaxPool2D())
    cin = BASE * w
    for i, c in enumerate((2 * BASE, 4 * BASE, 4 * BASE)):
        s = b.scope(f"block{i + 1}")
        xception_block(s, src, cin, c * w)
        src = s.add("pool", MaxPool2D())
        cin = c * w
    return g


def resnet_mini(input_size: int = 128, width: int = 1) -> ModelGraph:
    _check_divisible(input_size, 4)
    g, b = _backbone("resnet_mini", input_size, width)
    w = width
    _conv_relu(b, "stem", INPUT, 3, BASE * w)
    src = b.add("stem_pool", MaxPool2D())
    cin = BASE * w
    for i, c in enumerate((2 * BASE, 4 * BASE, 4 * BASE)):
        s = b.scope(f"block{i + 1}")
        resnet_block(s, src, cin, c * w)
        src = s.add("pool", MaxPool2D())
        cin = c * w
    return g


def vgg19_shape(input_size: int = 224, include_top: bool = False, num_classes: int = 1000) -> ModelGraph:
    """Full VGG19 inventory: 2x64, 2x128, 4x256, 4x512, 4x512 convs, a pool after each group."""
    _check_divisible(input_size, 5)
    g, b = _backbone("vgg19_shape", input_size, 1)
    cin, src = 3, INPUT
    for stage, (c, n) in enumerate([(64, 2), (128, 2), (256, 4), (512, 4), (512, 4)]):
        s = b.scope(f"block{stage + 1}")
        for i in range(n):
            src = _conv_relu(s, f"conv{i}", src, cin, c)
            cin = c
        src = s.add("pool", MaxPool2D())
    if include_top:
        b.add("flatten", Flatten())
        dim = 512 * (input_size // 32) ** 2
        for i, (din, dout) in enumerate([(dim, 4096), (4096, 4096)]):
            b.add(f"fc{i}", Dense(din, dout))
            b.add(f"fc{i}_relu", ReLU())
        b.add("fc2", Dense(4096, num_classes))
        b.add("softmax", Softmax())
    return g


RESNET34_STAGES = ((64, 3), (128, 4), (256, 6), (512, 3))


def resnet34_shape(input_size: int = 224, include_top: bool = False, num_classes: int = 1000) -> ModelGraph:
    """ResNet-34 layout: 7x7 stem, 16 basic blocks, stride-2 projections between stages."""
    _check_divisible(input_size, 5)
    g, b = _backbone("resnet34_shape", input_size, 1)
    _conv_relu(b, "stem", INPUT, 3, 64, 7, 2)
    src = b.add("stem_pool", MaxPool2D())
    cin = 64
    for si, (c, n) in enumerate(RESNET34_STAGES):
        for bi in range(n):
            stride = 2 if (si > 0 and bi == 0) else 1
            src = resnet_block(b.scope(f"stage{si + 1}.block{bi}"), src, cin, c, stride)
            cin = c
    if include_top:
        b.add("flatten", Flatten())
        b.add("fc", Dense(512 * (input_size // 32) ** 2, num_classes))
        b.add("softmax", Softmax())
    return g


def main_path_weighted_layers(g: ModelGraph) -> int:
    """Conv and dense layers along the main path (shortcut projections excluded)."""
    return sum(
        1
        for n in g.nodes
        if n.layer.kind in ("Conv2D", "SeparableConv2D", "Dense") and not n.name.endswith("shortcut")
    )


BACKBONES = {
    "vgg_mini": vgg_mini,
    "inception_mini": inception_mini,
    "xception_mini": xception_mini,
    "resnet_mini": resnet_mini,
    "vgg19_shape": vgg19_shape,
    "resnet34_shape": resnet34_shape,
}


def build_vgg(kind: str = "vgg_mini", input_size: int | None = None, width: int = 1) -> ModelGraph:
    if kind == "vgg19_shape":
        return vgg19_shape(input_size or 224)
    if kind == "vgg_mini":
        return vgg_mini(input_size or 128, width)
    raise ValueError(f"unknown VGG kind {kind!r}")


# --------------------------------------------------------------------------- head


def build_head(backbone: ModelGraph, num_classes: int = 8) -> ModelGraph:
    """Wrap a backbone: input batchnorm, backbone, 1x1 conv to 128, flatten, 512, classes, softmax."""
    out = backbone.output_shape
    if len(out) != 4:
        raise ValueError(f"backbone must emit a 4-D feature map, got {out}")
    c_in = backbone.input_shape[0]
    g = ModelGraph(backbone.input_shape, {**backbone.descriptor, "num_classes": num_classes})
    g.add_node("input_bn", BatchNorm(c_in), (INPUT,))
    for n in backbone.nodes:
        g.add_node(n.name, n.layer, tuple("input_bn" if s == INPUT else s for s in n.inputs))
    _, c, h, w = out
    b = GraphBuilder(g, "head.")
    b.add("conv", Conv2D(c, HEAD_FILTERS, 1))
    b.add("flatten", Flatten())
    b.add("fc1", Dense(HEAD_FILTERS * h * w, HEAD_HIDDEN))
    b.add("fc1_relu", ReLU())
    # exactly uniform predictions before training
    b.add("fc2", Dense(HEAD_HIDDEN, num_classes, init="zeros"))
    b.add("softmax", Softmax())
    return g


def build_model(
    architecture: str,
    num_classes: int = 8,
    input_size: int = 128,
    width: int = 1,
    seed: int | None = 0,
) -> ModelGraph:
    """Backbone + head, initialised with ``seed`` (pass ``None`` to skip allocation)."""
    if architecture not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {architecture!r}; choose from {', '.join(ARCHITECTURES)}")
    model = build_head(BACKBONES[architecture](input_size, width), num_classes)
    if seed is not None:
        model.initialize(seed)
    return model
