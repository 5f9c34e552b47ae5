"""Central finite-difference checks for layers and whole models (float64)."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .graph import ModelGraph
from .layers import Layer
from .optim import cross_entropy, loss_gradient

STEP = 1e-6


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||); 0 when both vanish."""
    a = np.ravel(a)
    b = np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return float(np.linalg.norm(a - b) / scale) if scale > 0 else 0.0


def numeric_grad(f: Callable[[], float], arr: np.ndarray, coords=None, h: float = STEP) -> np.ndarray:
    """Central differences of ``f`` w.r.t. entries of ``arr`` (perturbed in place)."""
    flat = arr.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = []
    for i in coords:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def check_layer(layer: Layer, inputs: list[np.ndarray], params: dict, rng: np.random.Generator, train: bool = True, buffers=None, h: float = STEP) -> dict[str, float]:
    """Relative error of every input and parameter gradient of ``layer``.

    The scalar probed is ``sum(w * y)`` for a fixed random ``w``.
    """
    buffers = buffers if buffers is not None else layer.init_buffers(np.float64)
    y, _ = layer.forward(params, *inputs, train=train, buffers=buffers)
    w = rng.standard_normal(y.shape)

    def f():
        return float((layer.forward(params, *inputs, train=train, buffers=buffers)[0] * w).sum())

    _, cache = layer.forward(params, *inputs, train=train, buffers=buffers)
    gin, gp = layer.backward(params, cache, w)
    errors = {}
    for i, x in enumerate(inputs):
        errors[f"input{i}"] = relative_error(gin[i], numeric_grad(f, x, h=h))
    for name, p in params.items():
        errors[name] = relative_error(gp[name], numeric_grad(f, p, h=h))
    return errors


def randomize_classifier(model: ModelGraph, x: np.ndarray, rng: np.random.Generator, logit_std: float = 1.0) -> str:
    """Redraw the last dense kernel so the logits on ``x`` have spread ``logit_std``.

    The default classifier starts at zero, which hides every backbone gradient;
    a check instance needs a non-degenerate but unsaturated softmax.
    """
    name = [n for n in model.layers("Dense")][-1].name
    hidden = model.forward(x.astype(model.dtype), train=True, upto=model.node(name).inputs[0])
    w = rng.standard_normal(model.params[f"{name}.weight"].shape)
    spread = float((hidden @ w).std()) or 1.0
    model.params[f"{name}.weight"] = (w * logit_std / spread).astype(model.dtype)
    return name


def _directional(f: Callable[[], float], arr: np.ndarray, direction: np.ndarray, h: float) -> float:
    base = arr.copy()
    arr += h * direction
    fp = f()
    arr[...] = base - h * direction
    fm = f()
    arr[...] = base
    return (fp - fm) / (2 * h)


def check_model(
    model: ModelGraph,
    x: np.ndarray,
    labels: np.ndarray,
    rng: np.random.Generator,
    samples_per_tensor: int = 1,
    fused: bool = True,
    h: float = STEP,
) -> dict[str, float]:
    """Finite-difference check of a whole model under the cross-entropy loss.

    Per tensor (every parameter plus the input) the probes are: the unit
    direction of the analytic gradient, the ``samples_per_tensor`` coordinates
    with the largest analytic gradient, and one random unit direction. The
    reported figure is the norm-wise relative error over that probe vector,
    the same measure ``check_layer`` uses over full tensors.

    The +h/-h evaluations replay the base point's ReLU masks and max-pool
    winners, so the difference quotient is taken on the smooth piece the
    analytic gradient belongs to, even when a perturbation of a global tensor
    nudges some unit across its switching point.

    ``fused`` uses the softmax+cross-entropy shortcut for the analytic
    gradient; otherwise the gradient flows through the softmax layer's own
    backward.
    """
    x = x.astype(np.float64)
    probs = model.forward(x, train=True)
    patterns = model.activation_patterns()
    if fused:
        gx, grads = model.backward(loss_gradient(labels, probs), skip_output=True)
    else:
        gx, grads = model.backward(loss_gradient(labels, probs, fused=False))

    def f():
        return cross_entropy(labels, model.forward(x, train=True, patterns=patterns)).mean

    tensors = dict(model.params)
    tensors["input"] = x
    grads = dict(grads)
    grads["input"] = gx
    errors = {}
    for name, arr in tensors.items():
        g = grads[name]
        norm = np.linalg.norm(g)
        rand = rng.standard_normal(arr.shape)
        rand /= np.linalg.norm(rand)
        analytic, numeric = [], []
        for d in ([g / norm] if norm > 0 else []) + [rand]:
            analytic.append(float((g * d).sum()))
            numeric.append(_directional(f, arr, d, h))
        coords = np.argsort(-np.abs(g.reshape(-1)), kind="stable")[:samples_per_tensor]
        analytic.extend(g.reshape(-1)[coords])
        numeric.extend(numeric_grad(f, arr, coords, h))
        errors[name] = relative_error(np.array(analytic), np.array(numeric))
    return errors
