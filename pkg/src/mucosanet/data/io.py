"""Image file reading and writing.

Binary PPM (P6) is parsed here so it stays bit-exact; PNG and JPEG go through
Pillow.
"""
from __future__ import annotations

import os
import re

import numpy as np


class ImageFormatError(ValueError):
    """Unsupported or corrupt image file."""


PPM_SUFFIXES = (".ppm",)
PIL_SUFFIXES = (".png", ".jpg", ".jpeg")
IMAGE_SUFFIXES = PPM_SUFFIXES + PIL_SUFFIXES

_HEADER = re.compile(rb"P6(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)\s")


def is_image_file(path: str) -> bool:
    return os.path.splitext(path)[1].lower() in IMAGE_SUFFIXES


def _decode_ppm(blob: bytes, path: str) -> np.ndarray:
    m = _HEADER.match(blob)
    if not m:
        raise ImageFormatError(f"{path}: not a binary PPM (P6) file")
    w, h, maxval = (int(g) for g in m.groups())
    if w < 1 or h < 1 or not 0 < maxval < 256:
        raise ImageFormatError(f"{path}: unsupported PPM header {w}x{h} maxval={maxval}")
    payload = blob[m.end() :]
    need = w * h * 3
    if len(payload) < need:
        raise ImageFormatError(f"{path}: truncated PPM payload ({len(payload)} of {need} bytes)")
    rgb = np.frombuffer(payload, dtype=np.uint8, count=need).reshape(h, w, 3)
    img = rgb.transpose(2, 0, 1).astype(np.float64)
    if maxval != 255:
        img *= 255.0 / maxval
    return img


def load_image(path: str) -> np.ndarray:
    """Return a ``[3, H, W]`` float64 tensor of raw 0-255 values."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"image not found: {path}")
    suffix = os.path.splitext(path)[1].lower()
    if suffix in PPM_SUFFIXES:
        with open(path, "rb") as fh:
            return _decode_ppm(fh.read(), path)
    if suffix in PIL_SUFFIXES:
        from PIL import Image, UnidentifiedImageError

        try:
            with Image.open(path) as im:
                rgb = np.asarray(im.convert("RGB"))
        except (UnidentifiedImageError, OSError) as exc:
            raise ImageFormatError(f"{path}: {exc}") from exc
        return rgb.transpose(2, 0, 1).astype(np.float64)
    raise ImageFormatError(f"{path}: unsupported image format {suffix!r}")


def save_ppm(path: str, img: np.ndarray) -> None:
    """Write a ``[3, H, W]`` tensor of 0-255 values as P6."""
    arr = np.clip(np.rint(np.asarray(img, dtype=np.float64)), 0, 255).astype(np.uint8)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"expected [3,H,W], got {arr.shape}")
    _, h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(arr.transpose(1, 2, 0).tobytes())
