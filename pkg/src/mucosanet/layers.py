"""Layer kinds with forward and hand-derived backward passes.

Every layer is a small frozen dataclass holding its hyperparameters. Parameters
and buffers live outside the layer (in the model's registry) and are passed in
as dicts keyed by local name, e.g. ``{"kernel": ..., "bias": ...}``.

``forward`` returns ``(y, cache)``; ``backward`` consumes that cache and returns
``(grad_inputs, grad_params)`` where ``grad_inputs`` is a list with one entry
per layer input.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError


class CacheError(RuntimeError):
    """Backward was called with a cache from a different or stale forward."""


class Cache:
    __slots__ = ("owner", "data", "valid")

    def __init__(self, owner: "Layer", **data: Any):
        self.owner = owner
        self.data = data
        self.valid = True

    def __getitem__(self, key):
        return self.data[key]


def _take(layer: "Layer", cache: Cache) -> Cache:
    if not isinstance(cache, Cache) or cache.owner is not layer:
        raise CacheError(f"cache does not belong to {layer!r}")
    if not cache.valid:
        raise CacheError(f"stale cache for {layer!r}")
    return cache


INIT_GAINS = {"he": 2.0, "unit": 1.0}


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype, init: str = "he") -> np.ndarray:
    """He-normal by default; ``unit`` drops the ReLU gain, ``zeros`` gives an all-zero kernel."""
    if init == "zeros":
        return np.zeros(shape, dtype)
    return (rng.standard_normal(shape) * np.sqrt(INIT_GAINS[init] / fan_in)).astype(dtype)


class Layer:
    """Common surface. Subclasses override what they need."""

    kind = "Layer"
    n_inputs = 1

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {}

    def buffer_shapes(self) -> dict[str, tuple[int, ...]]:
        return {}

    def init_params(self, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
        return {}

    def init_buffers(self, dtype=np.float32) -> dict[str, np.ndarray]:
        return {}

    def output_shape(self, *shapes: tuple[int, ...]) -> tuple[int, ...]:
        return shapes[0]

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        d.update(self.__dict__)
        return d


def _pad_amount(kernel: int, padding: str) -> int:
    if padding == "same":
        return kernel // 2
    if padding == "valid":
        return 0
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def _out_size(n: int, kernel: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - kernel) // stride + 1


def _check_conv_input(x: np.ndarray, channels: int, kernel: int, padding: str, name: str):
    if x.ndim != 4:
        raise ShapeError(f"{name} expects [B,C,H,W], got {x.shape}")
    if x.shape[1] != channels:
        raise ShapeError(f"{name} expects {channels} input channels, got {x.shape[1]}")
    if padding == "valid" and (x.shape[2] < kernel or x.shape[3] < kernel):
        raise ShapeError(f"{name}: input {x.shape[2:]} smaller than kernel {kernel}")


def _pad(x: np.ndarray, pad: int, value: float = 0.0) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=value)


def _unpad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return x[:, :, pad:-pad, pad:-pad]


def _windows(xp: np.ndarray, k: int, s: int, ho: int, wo: int) -> np.ndarray:
    """View of shape [B, C, ho, wo, k, k] over the padded input."""
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, : s * (ho - 1) + 1 : s, : s * (wo - 1) + 1 : s]


def _scatter_windows(dxp: np.ndarray, dwin: np.ndarray, k: int, s: int, ho: int, wo: int):
    """Adjoint of ``_windows``: accumulate [B, C, ho, wo, k, k] back into ``dxp``."""
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += dwin[..., i, j]


# --------------------------------------------------------------------------- conv


@dataclass(frozen=True)
class Conv2D(Layer):
    in_ch: int
    out_ch: int
    kernel: int = 3
    stride: int = 1
    padding: str = "same"
    init: str = "he"

    kind = "Conv2D"

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd, got {self.kernel}")
        if self.stride < 1 or self.in_ch < 1 or self.out_ch < 1:
            raise ValueError("stride and channel counts must be >= 1")
        _pad_amount(self.kernel, self.padding)

    def param_shapes(self):
        k = self.kernel
        return {"kernel": (self.out_ch, self.in_ch, k, k), "bias": (self.out_ch,)}

    def init_params(self, rng, dtype=np.float32):
        fan_in = self.in_ch * self.kernel**2
        return {
            "kernel": he_normal(rng, self.param_shapes()["kernel"], fan_in, dtype, self.init),
            "bias": np.zeros(self.out_ch, dtype=dtype),
        }

    def output_shape(self, shape):
        if len(shape) != 4 or shape[1] != self.in_ch:
            raise ShapeError(f"{self.kind} expects [B,{self.in_ch},H,W], got {tuple(shape)}")
        b, _, h, w = shape
        p = _pad_amount(self.kernel, self.padding)
        return (b, self.out_ch, _out_size(h, self.kernel, self.stride, p), _out_size(w, self.kernel, self.stride, p))

    def forward(self, params, x, train=True, buffers=None):
        _check_conv_input(x, self.in_ch, self.kernel, self.padding, "Conv2D")
        k, s = self.kernel, self.stride
        p = _pad_amount(k, self.padding)
        b, c, h, w = x.shape
        ho, wo = _out_size(h, k, s, p), _out_size(w, k, s, p)
        if k == 1 and s == 1:
            cols = x.transpose(0, 2, 3, 1).reshape(-1, c)
        else:
            win = _windows(_pad(x, p), k, s, ho, wo)
            cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * k * k)
        wmat = params["kernel"].reshape(self.out_ch, -1)
        out = cols @ wmat.T
        out += params["bias"]
        y = out.reshape(b, ho, wo, self.out_ch).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(y), Cache(self, cols=cols, in_shape=x.shape, out_hw=(ho, wo))

    def backward(self, params, cache, grad_out):
        cache = _take(self, cache)
        b, c, h, w = cache["in_shape"]
        ho, wo = cache["out_hw"]
        k, s = self.kernel, self.stride
        p = _pad_amount(k, self.padding)
        go = grad_out.transpose(0, 2, 3, 1).reshape(-1, self.out_ch)
        wmat = params["kernel"].reshape(self.out_ch, -1)
        grads = {
            "kernel": (go.T @ cache["cols"]).reshape(params["kernel"].shape),
            "bias": go.sum(axis=0),
        }
        dcols = go @ wmat
        if k == 1 and s == 1:
            dx = dcols.reshape(b, h, w, c).transpose(0, 3, 1, 2)
        else:
            dwin = dcols.reshape(b, ho, wo, c, k, k).transpose(0, 3, 1, 2, 4, 5)
            dxp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=grad_out.dtype)
            _scatter_windows(dxp, dwin, k, s, ho, wo)
            dx = _unpad(dxp, p)
        return [np.ascontiguousarray(dx)], grads


def _depthwise(x, kernel, k, s, p, ho, wo):
    xp = _pad(x, p)
    y = np.zeros((x.shape[0], x.shape[1], ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            sl = xp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s]
            y += sl * kernel[:, 0, i, j][None, :, None, None]
    return y, xp


def _depthwise_backward(xp, kernel, grad_out, k, s, p):
    _, _, ho, wo = grad_out.shape
    dk = np.zeros_like(kernel)
    dxp = np.zeros_like(xp)
    for i in range(k):
        for j in range(k):
            idx = (slice(None), slice(None), slice(i, i + s * (ho - 1) + 1, s), slice(j, j + s * (wo - 1) + 1, s))
            dk[:, 0, i, j] = np.einsum("bchw,bchw->c", grad_out, xp[idx])
            dxp[idx] += grad_out * kernel[:, 0, i, j][None, :, None, None]
    return _unpad(dxp, p), dk


@dataclass(frozen=True)
class DepthwiseConv2D(Layer):
    """One spatial filter per input channel, no channel mixing."""

    channels: int
    kernel: int = 3
    stride: int = 1
    padding: str = "same"

    kind = "DepthwiseConv2D"

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd, got {self.kernel}")
        _pad_amount(self.kernel, self.padding)

    def param_shapes(self):
        return {"kernel": (self.channels, 1, self.kernel, self.kernel), "bias": (self.channels,)}

    def init_params(self, rng, dtype=np.float32):
        return {
            "kernel": he_normal(rng, self.param_shapes()["kernel"], self.kernel**2, dtype),
            "bias": np.zeros(self.channels, dtype=dtype),
        }

    def output_shape(self, shape):
        if len(shape) != 4 or shape[1] != self.channels:
            raise ShapeError(f"DepthwiseConv2D expects [B,{self.channels},H,W], got {tuple(shape)}")
        b, c, h, w = shape
        p = _pad_amount(self.kernel, self.padding)
        return (b, c, _out_size(h, self.kernel, self.stride, p), _out_size(w, self.kernel, self.stride, p))

    def forward(self, params, x, train=True, buffers=None):
        _check_conv_input(x, self.channels, self.kernel, self.padding, "DepthwiseConv2D")
        _, _, ho, wo = self.output_shape(x.shape)
        p = _pad_amount(self.kernel, self.padding)
        y, xp = _depthwise(x, params["kernel"], self.kernel, self.stride, p, ho, wo)
        y += params["bias"][None, :, None, None]
        return y, Cache(self, xp=xp)

    def backward(self, params, cache, grad_out):
        cache = _take(self, cache)
        p = _pad_amount(self.kernel, self.padding)
        dx, dk = _depthwise_backward(cache["xp"], params["kernel"], grad_out, self.kernel, self.stride, p)
        return [dx], {"kernel": dk, "bias": grad_out.sum(axis=(0, 2, 3))}


@dataclass(frozen=True)
class SeparableConv2D(Layer):
    """Depthwise spatial filtering followed by a 1x1 pointwise channel mix."""

    in_ch: int
    out_ch: int
    kernel: int = 3
    stride: int = 1
    padding: str = "same"

    kind = "SeparableConv2D"

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd, got {self.kernel}")
        _pad_amount(self.kernel, self.padding)

    def param_shapes(self):
        k = self.kernel
        return {
            "depthwise": (self.in_ch, 1, k, k),
            "pointwise": (self.out_ch, self.in_ch, 1, 1),
            "bias": (self.out_ch,),
        }

    def init_params(self, rng, dtype=np.float32):
        shapes = self.param_shapes()
        return {
            # no activation sits between the two stages
            "depthwise": he_normal(rng, shapes["depthwise"], self.kernel**2, dtype, "unit"),
            "pointwise": he_normal(rng, shapes["pointwise"], self.in_ch, dtype),
            "bias": np.zeros(self.out_ch, dtype=dtype),
        }

    def output_shape(self, shape):
        if len(shape) != 4 or shape[1] != self.in_ch:
            raise ShapeError(f"{self.kind} expects [B,{self.in_ch},H,W], got {tuple(shape)}")
        b, _, h, w = shape
        p = _pad_amount(self.kernel, self.padding)
        return (b, self.out_ch, _out_size(h, self.kernel, self.stride, p), _out_size(w, self.kernel, self.stride, p))

    def forward(self, params, x, train=True, buffers=None):
        _check_conv_input(x, self.in_ch, self.kernel, self.padding, "SeparableConv2D")
        b, _, ho, wo = self.output_shape(x.shape)
        p = _pad_amount(self.kernel, self.padding)
        mid, xp = _depthwise(x, params["depthwise"], self.kernel, self.stride, p, ho, wo)
        cols = mid.transpose(0, 2, 3, 1).reshape(-1, self.in_ch)
        out = cols @ params["pointwise"].reshape(self.out_ch, self.in_ch).T
        out += params["bias"]
        y = np.ascontiguousarray(out.reshape(b, ho, wo, self.out_ch).transpose(0, 3, 1, 2))
        return y, Cache(self, xp=xp, cols=cols)

    def backward(self, params, cache, grad_out):
        cache = _take(self, cache)
        b, _, ho, wo = grad_out.shape
        p = _pad_amount(self.kernel, self.padding)
        go = grad_out.transpose(0, 2, 3, 1).reshape(-1, self.out_ch)
        pw = params["pointwise"].reshape(self.out_ch, self.in_ch)
        d_pw = (go.T @ cache["cols"]).reshape(params["pointwise"].shape)
        dmid = (go @ pw).reshape(b, ho, wo, self.in_ch).transpose(0, 3, 1, 2)
        dx, d_dw = _depthwise_backward(cache["xp"], params["depthwise"], dmid, self.kernel, self.stride, p)
        return [dx], {"depthwise": d_dw, "pointwise": d_pw, "bias": go.sum(axis=0)}


def depthwise_separable_forward(layer: SeparableConv2D, params, x):
    return layer.forward(params, x)


# --------------------------------------------------------------------------- pooling


@dataclass(frozen=True)
class MaxPool2D(Layer):
    """Max pooling. Defaults to 2x2 windows at stride 2 (trailing odd row/col dropped).

    ``same=True`` pads with -inf so that a stride-1 pool keeps spatial size.
    Ties go to the first position of the window in row-major order.
    """

    size: int = 2
    stride: int = 2
    same: bool = False

    kind = "MaxPool2D"

    def _pad(self) -> int:
        return self.size // 2 if self.same else 0

    def output_shape(self, shape):
        b, c, h, w = shape
        p = self._pad()
        return (b, c, _out_size(h, self.size, self.stride, p), _out_size(w, self.size, self.stride, p))

    def forward(self, params, x, train=True, buffers=None, pattern=None):
        """``pattern`` replays a previous call's winner indices instead of taking the max."""
        if x.ndim != 4:
            raise ShapeError(f"MaxPool2D expects [B,C,H,W], got {x.shape}")
        b, c, ho, wo = self.output_shape(x.shape)
        if ho < 1 or wo < 1:
            raise ShapeError(f"input {x.shape[2:]} too small to pool")
        k, s, p = self.size, self.stride, self._pad()
        xp = _pad(x, p, -np.inf)
        win = _windows(xp, k, s, ho, wo).reshape(b, c, ho, wo, k * k)
        idx = win.argmax(axis=-1) if pattern is None else pattern
        y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        return np.ascontiguousarray(y), Cache(self, idx=idx, in_shape=x.shape)

    def backward(self, params, cache, grad_out):
        cache = _take(self, cache)
        b, c, h, w = cache["in_shape"]
        k, s, p = self.size, self.stride, self._pad()
        _, _, ho, wo = grad_out.shape
        idx = cache["idx"]
        dxp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=grad_out.dtype)
        for pos in range(k * k):
            i, j = divmod(pos, k)
            dxp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += np.where(idx == pos, grad_out, 0)
        return [_unpad(dxp, p)], {}


def maxpool2x2_forward(x):
    return MaxPool2D().forward({}, x)


# --------------------------------------------------------------------------- normalisation


@dataclass(frozen=True)
class BatchNorm(Layer):
    channels: int
    momentum: float = 0.9
    epsilon: float = 1e-5

    kind = "BatchNorm"

    def param_shapes(self):
        return {"gamma": (self.channels,), "beta": (self.channels,)}

    def buffer_shapes(self):
        return {"running_mean": (self.channels,), "running_var": (self.channels,)}

    def init_params(self, rng, dtype=np.float32):
        return {"gamma": np.ones(self.channels, dtype=dtype), "beta": np.zeros(self.channels, dtype=dtype)}

    def init_buffers(self, dtype=np.float32):
        return {"running_mean": np.zeros(self.channels, dtype=dtype), "running_var": np.ones(self.channels, dtype=dtype)}

    def _bshape(self, x):
        return (1, self.channels) + (1,) * (x.ndim - 2)

    def forward(self, params, x, train=True, buffers=None):
        if x.shape[0] == 0:
            raise ShapeError("BatchNorm needs a non-empty batch")
        if x.ndim < 2 or x.shape[1] != self.channels:
            raise ShapeError(f"BatchNorm expects {self.channels} channels, got {x.shape}")
        axes = (0,) + tuple(range(2, x.ndim))
        bs = self._bshape(x)
        if train:
            mean = x.mean(axis=axes)
            centred = x - mean.reshape(bs)
            var = (centred * centred).mean(axis=axes)
            if buffers is not None:
                m = self.momentum
                buffers["running_mean"][...] = m * buffers["running_mean"] + (1 - m) * mean
                buffers["running_var"][...] = m * buffers["running_var"] + (1 - m) * var
        else:
            mean, var = buffers["running_mean"], buffers["running_var"]
            centred = x - mean.reshape(bs)
        inv_std = (1.0 / np.sqrt(var + self.epsilon)).astype(x.dtype)
        xhat = centred * inv_std.reshape(bs)
        y = xhat * params["gamma"].reshape(bs) + params["beta"].reshape(bs)
        return y, Cache(self, xhat=xhat, inv_std=inv_std, train=train, axes=axes)

    def backward(self, params, cache, grad_out):
        cache = _take(self, cache)
        axes, xhat, inv_std = cache["axes"], cache["xhat"], cache["inv_std"]
        bs = self._bshape(grad_out)
        grads = {"gamma": (grad_out * xhat).sum(axis=axes), "beta": grad_out.sum(axis=axes)}
        dxhat = grad_out * params["gamma"].reshape(bs)
        if not cache["train"]:
            return [dxhat * inv_std.reshape(bs)], grads
        n = grad_out.size // self.channels
        sum_d = dxhat.sum(axis=axes).reshape(bs)
        sum_dx = (dxhat * xhat).sum(axis=axes).reshape(bs)
        dx = (inv_std.reshape(bs) / n) * (n * dxhat - sum_d - xhat * sum_dx)
        return [dx], grads


# --------------------------------------------------------------------------- dense & friends


@dataclass(frozen=True)
class Dense(Layer):
    in_dim: int
    out_dim: int
    init: str = "he"

    kind = "Dense"

    def param_shapes(self):
        return {"weight": (self.in_dim, self.out_dim), "bias": (self.out_dim,)}

    def init_params(self, rng, dtype=np.float32):
        return {
            "weight": he_normal(rng, (self.in_dim, self.out_dim), self.in_dim, dtype, self.init),
            "bias": np.zeros(self.out_dim, dtype=dtype),
        }

    def output_shape(self, shape):
        if len(shape) != 2 or shape[1] != self.in_dim:
            raise ShapeError(f"Dense expects [B,{self.in_dim}], got {tuple(shape)}")
        return (shape[0], self.out_dim)

    def forward(self, params, x, train=True, buffers=None):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"Dense expects [B,{self.in_dim}], got {x.shape}")
        return x @ params["weight"] + params["bias"], Cache(self, x=x)

    def backward(self, params, cache, grad_out):
        x = _take(self, cache)["x"]
        grads = {"weight": x.T @ grad_out, "bias": grad_out.sum(axis=0)}
        return [grad_out @ params["weight"].T], grads


@dataclass(frozen=True)
class ReLU(Layer):
    kind = "ReLU"

    def forward(self, params, x, train=True, buffers=None, pattern=None):
        mask = x > 0 if pattern is None else pattern
        return np.where(mask, x, 0).astype(x.dtype, copy=False), Cache(self, mask=mask)

    def backward(self, params, cache, grad_out):
        return [np.where(_take(self, cache)["mask"], grad_out, 0).astype(grad_out.dtype, copy=False)], {}


@dataclass(frozen=True)
class Flatten(Layer):
    kind = "Flatten"

    def output_shape(self, shape):
        return (shape[0], int(np.prod(shape[1:])))

    def forward(self, params, x, train=True, buffers=None):
        return x.reshape(x.shape[0], -1), Cache(self, in_shape=x.shape)

    def backward(self, params, cache, grad_out):
        return [grad_out.reshape(_take(self, cache)["in_shape"])], {}


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class Softmax(Layer):
    kind = "Softmax"

    def forward(self, params, x, train=True, buffers=None):
        y = softmax(x)
        return y, Cache(self, y=y)

    def backward(self, params, cache, grad_out):
        y = _take(self, cache)["y"]
        return [y * (grad_out - (grad_out * y).sum(axis=-1, keepdims=True))], {}


@dataclass(frozen=True)
class Add(Layer):
    kind = "Add"
    n_inputs = 2

    def output_shape(self, a, b):
        if tuple(a) != tuple(b):
            raise ShapeError(f"Add needs identical shapes, got {a} and {b}")
        return a

    def forward(self, params, a, b, train=True, buffers=None):
        if a.shape != b.shape:
            raise ShapeError(f"Add needs identical shapes, got {a.shape} and {b.shape}")
        return a + b, Cache(self)

    def backward(self, params, cache, grad_out):
        _take(self, cache)
        return [grad_out, grad_out], {}


@dataclass(frozen=True)
class Concat(Layer):
    """Channel-axis concatenation of ``n`` feature maps."""

    n: int = 2

    kind = "Concat"

    @property
    def n_inputs(self):
        return self.n

    def output_shape(self, *shapes):
        first = shapes[0]
        for s in shapes[1:]:
            if s[0] != first[0] or tuple(s[2:]) != tuple(first[2:]):
                raise ShapeError(f"Concat needs matching B,H,W, got {shapes}")
        return (first[0], sum(s[1] for s in shapes)) + tuple(first[2:])

    def forward(self, params, *xs, train=True, buffers=None):
        self.output_shape(*(x.shape for x in xs))
        return np.concatenate(xs, axis=1), Cache(self, sizes=[x.shape[1] for x in xs])

    def backward(self, params, cache, grad_out):
        sizes = _take(self, cache)["sizes"]
        return list(np.split(grad_out, np.cumsum(sizes)[:-1], axis=1)), {}


def residual_add_forward(x, f_x):
    return Add().forward({}, x, f_x)


def concat_forward(branches):
    return Concat(len(branches)).forward({}, *branches)


LAYER_KINDS: dict[str, type[Layer]] = {
    cls.kind: cls
    for cls in (Conv2D, DepthwiseConv2D, SeparableConv2D, MaxPool2D, BatchNorm, Dense, ReLU, Flatten, Softmax, Add, Concat)
}


def layer_from_dict(d: dict) -> Layer:
    d = dict(d)
    return LAYER_KINDS[d.pop("kind")](**d)
