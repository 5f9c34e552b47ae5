"""Random geometric augmentation: rotation, shear, zoom, shifts and flip."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class AugmentConfig:
    rotation: float = 20.0
    shear: float = 0.2
    zoom: tuple[float, float] = (0.8, 1.2)
    width_shift: float = 0.1
    height_shift: float = 0.1
    flip_prob: float = 0.5

    def __post_init__(self):
        if not 0 <= self.rotation <= 180:
            raise ValueError("rotation range must lie in [0, 180] degrees")
        for name in ("shear", "width_shift", "height_shift", "flip_prob"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in [0, 1)")
        lo, hi = self.zoom
        if not 0 < lo <= hi:
            raise ValueError("zoom range must satisfy 0 < low <= high")
        object.__setattr__(self, "zoom", (float(lo), float(hi)))

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(0.0, 0.0, (1.0, 1.0), 0.0, 0.0, 0.0)

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        d = dict(d)
        if "zoom" in d:
            d["zoom"] = tuple(d["zoom"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["zoom"] = list(self.zoom)
        return d


def _bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``[C, H, W]`` at float pixel coordinates; outside reads as 0."""
    c, h, w = img.shape
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    out = np.zeros((c,) + xs.shape, dtype=np.float64)
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            yi, xi = y0 + dy, x0 + dx
            ok = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
            wgt = np.where(ok, wy * wx, 0.0)
            out += img[:, np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)] * wgt
    return out


def affine_transform(
    img: np.ndarray,
    rotation_deg: float = 0.0,
    shear: float = 0.0,
    zoom: tuple[float, float] = (1.0, 1.0),
    shift: tuple[float, float] = (0.0, 0.0),
    flip: bool = False,
) -> np.ndarray:
    """Warp ``[C, H, W]`` about its centre.

    Positive ``rotation_deg`` turns the picture counter-clockwise as displayed
    (row 0 at the top). ``shift`` is (dx, dy) in pixels. The horizontal flip is
    applied last.
    """
    c, h, w = img.shape
    t = math.radians(rotation_deg)
    cos, sin = math.cos(t), math.sin(t)
    rot = np.array([[cos, sin], [-sin, cos]])
    forward = rot @ np.array([[1.0, shear], [0.0, 1.0]]) @ np.diag(zoom)
    inv = np.linalg.inv(forward)
    cx, cy = (w - 1) / 2, (h - 1) / 2
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx = xx - cx - shift[0]
    dy = yy - cy - shift[1]
    xs = inv[0, 0] * dx + inv[0, 1] * dy + cx
    ys = inv[1, 0] * dx + inv[1, 1] * dy + cy
    out = _bilinear_sample(np.asarray(img, dtype=np.float64), xs, ys)
    if flip:
        out = out[:, :, ::-1]
    return np.clip(out, 0.0, 1.0).astype(img.dtype, copy=False)


def hflip(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img[..., ::-1])


def augment(img: np.ndarray, label: int, config: AugmentConfig, rng: np.random.Generator):
    """Draw one set of magnitudes (each independently) and warp ``img``.

    Returns ``(image, label)``; the label is passed through untouched.
    """
    _, h, w = img.shape
    rotation = rng.uniform(-config.rotation, config.rotation)
    shear = rng.uniform(-config.shear, config.shear)
    zoom = (rng.uniform(*config.zoom), rng.uniform(*config.zoom))
    shift = (rng.uniform(-config.width_shift, config.width_shift) * w, rng.uniform(-config.height_shift, config.height_shift) * h)
    flip = bool(rng.random() < config.flip_prob)
    if config == AugmentConfig.identity():
        return img.copy(), label
    return affine_transform(img, rotation, shear, zoom, shift, flip), label
