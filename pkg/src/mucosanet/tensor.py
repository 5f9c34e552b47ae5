"""Dense tensor primitives.

Tensors are plain row-major ``numpy.ndarray`` values. Images are laid out
``[channels, height, width]`` and batches ``[batch, channels, height, width]``.
The helpers here add the shape/domain validation the rest of the package
relies on; hot paths in the layers call numpy directly.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

SINGLE = np.float32
DOUBLE = np.float64


class TensorError(ValueError):
    """Base class for tensor-level failures."""


class ShapeError(TensorError):
    pass


class DomainError(TensorError):
    pass


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if not shape or any(d < 1 for d in shape):
        raise ShapeError(f"all dimensions must be >= 1, got {shape}")
    return shape


def full(shape: Sequence[int], value: float, dtype=SINGLE) -> np.ndarray:
    return np.full(_check_shape(shape), value, dtype=dtype)


def zeros(shape: Sequence[int], dtype=SINGLE) -> np.ndarray:
    return full(shape, 0.0, dtype)


def ones(shape: Sequence[int], dtype=SINGLE) -> np.ndarray:
    return full(shape, 1.0, dtype)


def reshape(t: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    shape = _check_shape(shape)
    if int(np.prod(shape)) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} into {shape}")
    return np.ascontiguousarray(t).reshape(shape)


_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "max": np.maximum,
}
_UNARY = {
    "sqrt": np.sqrt,
    "ln": np.log,
    "exp": np.exp,
    "square": np.square,
}


def elementwise(op: str, a, b=None) -> np.ndarray:
    """Apply ``op`` per element. ``b`` must match ``a``'s shape or be a scalar."""
    a = np.asarray(a)
    if op in _UNARY:
        if b is not None:
            raise TypeError(f"{op} is unary")
        if op == "ln" and np.any(a <= 0):
            raise DomainError("ln of a non-positive element")
        if op == "sqrt" and np.any(a < 0):
            raise DomainError("sqrt of a negative element")
        return _UNARY[op](a)
    if op not in _BINARY:
        raise ValueError(f"unknown elementwise op {op!r}")
    if b is None:
        raise TypeError(f"{op} needs two operands")
    if not np.isscalar(b):
        b = np.asarray(b)
        if b.shape != a.shape:
            raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if op == "div" and np.any(np.asarray(b) == 0):
        raise DomainError("division by zero")
    return _BINARY[op](a, b)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def reduce(op: str, t: np.ndarray, axis: int | None = None):
    """Reduce with ``op`` in {sum, mean, max, argmax} over ``axis`` (None = all).

    argmax breaks ties toward the lowest index.
    """
    t = np.asarray(t)
    if axis is not None and not -t.ndim <= axis < t.ndim:
        raise ShapeError(f"axis {axis} out of range for {t.ndim}-d tensor")
    if op == "sum":
        return t.sum(axis=axis)
    if op == "mean":
        return t.mean(axis=axis)
    if op == "max":
        return t.max(axis=axis)
    if op == "argmax":
        # numpy returns the first occurrence, which is the tie-break we want
        return np.argmax(t, axis=axis) if axis is not None else int(np.argmax(t))
    raise ValueError(f"unknown reduction {op!r}")
