"""Procedural image classes for desk-scale training runs.

Two disjoint families are provided: ``target`` (stripes, checkers, rings, ...)
and ``source`` (spokes, dots, gradients, ...). Each sample draws its own
phase, frequency, colours and noise, so samples within a class differ.
"""
from __future__ import annotations

import os

import numpy as np

from .dataset import LabeledDataset, Sample
from .io import save_ppm


def _wave(t):
    return 0.5 + 0.5 * np.sin(2 * np.pi * t)


def _centre(rng):
    return 0.5 + rng.uniform(-0.1, 0.1), 0.5 + rng.uniform(-0.1, 0.1)


def _hstripes(u, v, rng):
    return _wave(rng.uniform(4, 6) * v + rng.random())


def _vstripes(u, v, rng):
    return _wave(rng.uniform(4, 6) * u + rng.random())


def _diagonal(u, v, rng):
    return _wave(rng.uniform(3, 5) * (u + v) + rng.random())


def _antidiagonal(u, v, rng):
    return _wave(rng.uniform(3, 5) * (u - v) + rng.random())


def _checker(u, v, rng):
    f = rng.uniform(3, 5)
    return (np.sin(2 * np.pi * (f * u + rng.random())) * np.sin(2 * np.pi * (f * v + rng.random())) > 0).astype(float)


def _rings(u, v, rng):
    cu, cv = _centre(rng)
    return _wave(rng.uniform(5, 8) * np.hypot(u - cu, v - cv) + rng.random())


def _disc(u, v, rng):
    cu, cv = _centre(rng)
    return (np.hypot(u - cu, v - cv) < rng.uniform(0.2, 0.35)).astype(float)


def _cross(u, v, rng):
    cu, cv = _centre(rng)
    w = rng.uniform(0.06, 0.12)
    return ((np.abs(u - cu) < w) | (np.abs(v - cv) < w)).astype(float)


def _spokes(u, v, rng):
    cu, cv = _centre(rng)
    return _wave(rng.integers(3, 6) * np.arctan2(v - cv, u - cu) / (2 * np.pi) + rng.random())


def _dots(u, v, rng):
    f = rng.uniform(3, 5)
    fu, fv = (f * u + rng.random()) % 1 - 0.5, (f * v + rng.random()) % 1 - 0.5
    return (np.hypot(fu, fv) < 0.25).astype(float)


def _hgradient(u, v, rng):
    return u if rng.random() < 0.5 else 1 - u


def _vgradient(u, v, rng):
    return v if rng.random() < 0.5 else 1 - v


def _square(u, v, rng):
    cu, cv = _centre(rng)
    return (np.maximum(np.abs(u - cu), np.abs(v - cv)) < rng.uniform(0.15, 0.3)).astype(float)


def _halfplane(u, v, rng):
    return ((u + v) < rng.uniform(0.8, 1.2)).astype(float)


def _blobs(u, v, rng):
    grid = rng.random((4, 4))
    iu = np.clip((u * 3).astype(int), 0, 2)
    iv = np.clip((v * 3).astype(int), 0, 2)
    fu, fv = u * 3 - iu, v * 3 - iv
    return (
        grid[iv, iu] * (1 - fu) * (1 - fv)
        + grid[iv, iu + 1] * fu * (1 - fv)
        + grid[iv + 1, iu] * (1 - fu) * fv
        + grid[iv + 1, iu + 1] * fu * fv
    )


def _zigzag(u, v, rng):
    return _wave(rng.uniform(4, 6) * u + 0.25 * np.sign(np.sin(2 * np.pi * rng.uniform(3, 5) * v)))


FAMILIES = {
    "target": {
        "checker": _checker,
        "cross": _cross,
        "diagonal": _diagonal,
        "antidiagonal": _antidiagonal,
        "disc": _disc,
        "hstripes": _hstripes,
        "rings": _rings,
        "vstripes": _vstripes,
    },
    "source": {
        "blobs": _blobs,
        "dots": _dots,
        "halfplane": _halfplane,
        "hgradient": _hgradient,
        "spokes": _spokes,
        "square": _square,
        "vgradient": _vgradient,
        "zigzag": _zigzag,
    },
}


def pattern(task: str, name: str, size: int, rng: np.random.Generator, noise: float = 0.05) -> np.ndarray:
    """One ``[3, size, size]`` float32 image in [0, 1]."""
    v, u = (np.mgrid[0:size, 0:size] + 0.5) / size
    mask = FAMILIES[task][name](u, v, rng)
    fg = rng.uniform(0.55, 1.0, 3)
    bg = rng.uniform(0.0, 0.45, 3)
    img = bg[:, None, None] * (1 - mask) + fg[:, None, None] * mask
    img = img + rng.normal(0, noise, img.shape)
    return np.clip(img, 0, 1).astype(np.float32)


def make_synthetic(task: str = "target", per_class: int = 8, size: int = 128, seed: int = 0, noise: float = 0.05) -> LabeledDataset:
    if task not in FAMILIES:
        raise ValueError(f"unknown synthetic task {task!r}")
    rng = np.random.default_rng(seed)
    names = sorted(FAMILIES[task])
    samples = []
    for label, name in enumerate(names):
        for i in range(per_class):
            samples.append(Sample(f"{name}/{i:04d}.ppm", label, pattern(task, name, size, rng, noise)))
    return LabeledDataset(names, samples, size)


def write_synthetic(root: str, task: str = "target", per_class: int = 8, size: int = 128, seed: int = 0, noise: float = 0.05) -> LabeledDataset:
    """Materialise a synthetic dataset as one PPM directory per class."""
    ds = make_synthetic(task, per_class, size, seed, noise)
    for name in ds.class_names:
        os.makedirs(os.path.join(root, name), exist_ok=True)
    for s in ds.samples:
        save_ppm(os.path.join(root, s.path), s.image * 255.0)
    return ds
