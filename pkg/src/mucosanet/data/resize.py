"""Area (pixel-area relation) resizing and [0, 1] normalisation."""
from __future__ import annotations

import numpy as np


def _area_weights(n_in: int, n_out: int) -> tuple[np.ndarray, int]:
    """Integer overlap matrix [n_out, n_in] and its common divisor.

    Lengths are measured in units of ``1 / n_out`` input pixels, so every
    overlap is an integer and each row sums to ``n_in``. Keeping the weights
    integral makes constant (and integer-valued) images resize exactly.
    """
    w = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = i * n_in, (i + 1) * n_in
        for j in range(lo // n_out, min(n_in, -(-hi // n_out))):
            overlap = min(hi, (j + 1) * n_out) - max(lo, j * n_out)
            if overlap > 0:
                w[i, j] = overlap
    return w, n_in


def _bilinear_weights(n_in: int, n_out: int) -> np.ndarray:
    w = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = min(max((i + 0.5) * n_in / n_out - 0.5, 0.0), n_in - 1)
        j = int(np.floor(src))
        frac = src - j
        w[i, j] += 1 - frac
        if frac > 0:
            w[i, j + 1] += frac
    return w


def axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, int]:
    """Per-axis resampling matrix and the divisor to apply after summation."""
    if n_out < 1:
        raise ValueError("target size must be positive")
    if n_out == n_in:
        return np.eye(n_in), 1
    if n_out < n_in:
        return _area_weights(n_in, n_out)
    return _bilinear_weights(n_in, n_out), 1


def resize_area(img: np.ndarray, out_h: int = 128, out_w: int = 128) -> np.ndarray:
    """Resize a ``[C, H, W]`` image.

    Shrinking uses an exact box filter: every output pixel is the
    overlap-weighted mean of the input pixels under its footprint. Enlarging
    falls back to bilinear interpolation. Axes are handled independently, so
    the two directions may differ.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError(f"expected [C,H,W], got {img.shape}")
    wh, dh = axis_weights(img.shape[1], out_h)
    ww, dw = axis_weights(img.shape[2], out_w)
    out = np.einsum("ih,chw,jw->cij", wh, img, ww, optimize=True)
    return out / (dh * dw) if dh * dw != 1 else out


def normalize(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) / 255.0


def preprocess(img: np.ndarray, size: int = 128) -> np.ndarray:
    """Resize to ``size`` x ``size`` and scale to [0, 1]; returns float32."""
    return normalize(resize_area(img, size, size)).astype(np.float32)
