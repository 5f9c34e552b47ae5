"""Cross-entropy loss and the max-tracking Adam update.

The update follows the literal rule

    m_t     = b1 * m_{t-1} + (1 - b1) * g_t
    v_t     = b2 * v_{t-1} + (1 - b2) * g_t**2
    vhat_t  = max(vhat_{t-1}, v_t)
    theta  -= lr * m_t / sqrt(vhat_t + eps)

with no bias correction and ``eps`` inside the square root. ``variant="adam"``
switches to canonical bias-corrected Adam for comparison runs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .tensor import ShapeError

CLAMP_MIN = 1e-12


class NonFiniteError(FloatingPointError):
    """A NaN or infinity reached the loss or the optimizer."""


@dataclass
class LossValue:
    per_sample: np.ndarray
    mean: float


def _check_pair(y_true: np.ndarray, y_pred: np.ndarray) -> None:
    if y_true.shape != y_pred.shape or y_true.ndim != 2:
        raise ShapeError(f"expected matching [B,K] tensors, got {y_true.shape} and {y_pred.shape}")
    if not (np.all((y_true == 0) | (y_true == 1)) and np.all(y_true.sum(axis=1) == 1)):
        raise ValueError("y_true must be one-hot")


def cross_entropy(y_true: np.ndarray, y_pred: np.ndarray) -> LossValue:
    """Per-sample ``-sum(y * ln(y_hat))`` and its batch mean."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    _check_pair(y_true, y_pred)
    if not np.all(np.isfinite(y_pred)):
        raise NonFiniteError("non-finite prediction")
    if np.any(np.abs(y_pred.sum(axis=1) - 1) > 1e-4):
        raise ValueError("y_pred rows must sum to 1")
    logp = np.log(np.clip(y_pred, CLAMP_MIN, 1.0))
    per = -(y_true * logp).sum(axis=1)
    # -0.0 for the perfect case reads oddly downstream
    per = np.maximum(per, 0.0)
    return LossValue(per, float(per.mean()))


def loss_gradient(y_true: np.ndarray, y_pred: np.ndarray, fused: bool = True) -> np.ndarray:
    """Gradient of the batch-mean loss.

    ``fused=True`` gives the gradient with respect to the softmax logits,
    ``(y_hat - y) / B``; otherwise with respect to ``y_hat`` itself,
    ``-y / (B * y_hat)``.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    _check_pair(y_true, y_pred)
    b = y_true.shape[0]
    if fused:
        return (y_pred - y_true) / b
    clipped = np.clip(y_pred, CLAMP_MIN, 1.0)
    grad = -y_true / (b * clipped)
    # the clamp is flat outside its range
    return np.where((y_pred >= CLAMP_MIN) & (y_pred <= 1.0), grad, 0.0).astype(y_pred.dtype)


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    variant: str = "literal"
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    vhat: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in ("literal", "adam"):
            raise ValueError(f"unknown optimizer variant {self.variant!r}")


def adam_step(
    state: OptimizerState,
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    names: Iterable[str] | None = None,
) -> None:
    """Update ``params`` in place from ``grads``; only ``names`` if given."""
    names = list(params if names is None else names)
    for name in names:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for name in names:
        p, g = params[name], grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
            state.vhat[name] = np.zeros_like(p)
        m, v, vhat = state.m[name], state.v[name], state.vhat[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        if state.variant == "literal":
            np.maximum(vhat, v, out=vhat)
            p -= (state.lr * m / np.sqrt(vhat + state.eps)).astype(p.dtype, copy=False)
        else:
            m_hat = m / (1 - b1**state.t)
            v_hat = v / (1 - b2**state.t)
            p -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)
