"""Class-per-directory datasets, deterministic splits, batching."""
from __future__ import annotations

import math
import os
import queue
import threading
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .augment import AugmentConfig, augment
from .io import is_image_file, load_image
from .resize import preprocess

TEST_FRACTION = 0.10
VAL_FRACTION = 0.20
SPLITS = ("train", "val", "test")


class DatasetError(ValueError):
    pass


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class Sample:
    path: str
    label: int
    image: np.ndarray | None = None


class LabeledDataset:
    """Ordered samples with labels in ``range(len(class_names))``.

    Images are ``[3, size, size]`` float32 in [0, 1]. With ``cache=False``
    images are re-read from ``path`` on every access (for large datasets).
    """

    def __init__(self, class_names: Sequence[str], samples: list[Sample], size: int = 128, root: str | None = None, cache: bool = True):
        self.class_names = list(class_names)
        self.samples = samples
        self.size = size
        self.root = root
        self.cache = cache
        k = len(self.class_names)
        for s in samples:
            if not 0 <= s.label < k:
                raise DatasetError(f"label {s.label} out of range for {k} classes")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def image(self, i: int) -> np.ndarray:
        s = self.samples[i]
        if s.image is not None:
            return s.image
        full = os.path.join(self.root, s.path) if self.root else s.path
        img = preprocess(load_image(full), self.size)
        if self.cache:
            s.image = img
        return img

    def relpath(self, i: int) -> str:
        return self.samples[i].path


def scan_dataset(root: str) -> tuple[list[str], list[tuple[str, int]]]:
    """Sorted class directory names and ``(relative path, label)`` pairs."""
    if not os.path.isdir(root):
        raise FileNotFoundError(f"dataset root not found: {root}")
    classes = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)) and not d.startswith("."))
    if len(classes) < 2:
        raise DatasetError(f"{root}: need at least 2 class subdirectories, found {len(classes)}")
    entries = []
    for label, name in enumerate(classes):
        for f in sorted(os.listdir(os.path.join(root, name))):
            if is_image_file(f):
                entries.append((f"{name}/{f}", label))
    return classes, entries


def load_dataset(root: str, size: int = 128, cache: bool = True, eager: bool = False) -> LabeledDataset:
    classes, entries = scan_dataset(root)
    ds = LabeledDataset(classes, [Sample(p, l) for p, l in entries], size, root, cache)
    if eager:
        for i in range(len(ds)):
            ds.image(i)
    return ds


# --------------------------------------------------------------------------- splitting


@dataclass
class SplitIndices:
    train: list[int]
    val: list[int]
    test: list[int]
    seed: int = 0
    test_fraction: float = TEST_FRACTION
    val_fraction: float = VAL_FRACTION

    def __post_init__(self):
        sets = [set(self.train), set(self.val), set(self.test)]
        if sum(map(len, sets)) != len(set().union(*sets)):
            raise DatasetError("split partitions overlap")

    def of(self, name: str) -> list[int]:
        return getattr(self, name)

    def role(self) -> dict[int, str]:
        return {i: name for name in SPLITS for i in self.of(name)}


def split_sizes(n: int, test_fraction: float = TEST_FRACTION, val_fraction: float = VAL_FRACTION) -> tuple[int, int, int]:
    n_test = round_half_up(test_fraction * n)
    n_val = round_half_up(val_fraction * (n - n_test))
    return n - n_test - n_val, n_val, n_test


def split_indices(
    labels: Sequence[int] | int,
    seed: int = 0,
    stratified: bool = False,
    test_fraction: float = TEST_FRACTION,
    val_fraction: float = VAL_FRACTION,
) -> SplitIndices:
    """Shuffle by ``seed``, carve off test, then validation from the remainder.

    ``labels`` may be an int (a label-free dataset of that size) for the
    non-stratified case.
    """
    labels = np.zeros(labels, dtype=np.int64) if isinstance(labels, int) else np.asarray(labels)
    n = len(labels)
    if n < 10:
        raise DatasetError(f"need at least 10 samples to split, got {n}")
    rng = np.random.default_rng(seed)
    if not stratified:
        groups = [np.arange(n)]
    else:
        groups = [np.flatnonzero(labels == c) for c in np.unique(labels)]
        small = [len(g) for g in groups if len(g) < 3]
        if small:
            raise DatasetError("stratified split needs at least 3 samples per class")
    train, val, test = [], [], []
    for g in groups:
        order = g[rng.permutation(len(g))]
        n_tr, n_va, n_te = split_sizes(len(g), test_fraction, val_fraction)
        test += order[:n_te].tolist()
        val += order[n_te : n_te + n_va].tolist()
        train += order[n_te + n_va :].tolist()
    return SplitIndices(sorted(train), sorted(val), sorted(test), seed, test_fraction, val_fraction)


def split(dataset: LabeledDataset, seed: int = 0, stratified: bool = False) -> SplitIndices:
    return split_indices(dataset.labels, seed, stratified)


def write_manifest(path: str, dataset: LabeledDataset, indices: SplitIndices) -> None:
    role = indices.role()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in range(len(dataset)):
            if i in role:
                fh.write(f"{dataset.relpath(i)}\t{role[i]}\n")


def read_manifest(path: str, dataset: LabeledDataset) -> SplitIndices:
    """Rebuild split indices from a ``<relative-path>\\t<split>`` manifest."""
    by_path = {dataset.relpath(i): i for i in range(len(dataset))}
    parts: dict[str, list[int]] = {s: [] for s in SPLITS}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                rel, which = line.split("\t")
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: expected '<path>\\t<split>'") from None
            if which not in parts:
                raise DatasetError(f"{path}:{lineno}: unknown split {which!r}")
            if rel not in by_path:
                raise DatasetError(f"{path}:{lineno}: {rel!r} not present in dataset")
            parts[which].append(by_path[rel])
    return SplitIndices(sorted(parts["train"]), sorted(parts["val"]), sorted(parts["test"]))


# --------------------------------------------------------------------------- batching


@dataclass
class Batch:
    images: np.ndarray
    labels: np.ndarray
    indices: list[int] = field(default_factory=list)

    @property
    def targets(self) -> np.ndarray:
        return self.labels.argmax(axis=1)


def one_hot(labels: Sequence[int], k: int, dtype=np.float32) -> np.ndarray:
    out = np.zeros((len(labels), k), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def batches(
    dataset: LabeledDataset,
    indices: Sequence[int],
    batch_size: int = 16,
    seed: int | None = None,
    augment_config: AugmentConfig | None = None,
    augment_seed: int = 0,
    epoch: int = 0,
    audit: set | None = None,
) -> Iterator[Batch]:
    """Yield batches over ``indices``.

    ``seed`` shuffles the epoch order (None keeps the given order). Augmentation
    is drawn from a generator seeded by ``(augment_seed, epoch)`` in sample
    order, so content is reproducible. Every consumed index is added to
    ``audit`` when given.
    """
    indices = list(indices)
    if not indices:
        raise DatasetError("cannot batch an empty index list")
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    if seed is not None:
        order = np.random.default_rng([seed, epoch]).permutation(len(indices))
        indices = [indices[i] for i in order]
    rng = np.random.default_rng([augment_seed, epoch]) if augment_config is not None else None
    k = dataset.num_classes
    for start in range(0, len(indices), batch_size):
        chunk = indices[start : start + batch_size]
        if audit is not None:
            audit.update(chunk)
        imgs = []
        for i in chunk:
            img = dataset.image(i)
            if rng is not None:
                img, _ = augment(img, dataset.samples[i].label, augment_config, rng)
            imgs.append(img)
        labels = [dataset.samples[i].label for i in chunk]
        yield Batch(np.stack(imgs).astype(np.float32, copy=False), one_hot(labels, k), chunk)


_DONE = object()


def prefetch(items: Iterable, capacity: int = 2) -> Iterator:
    """Produce ``items`` on a background thread through a bounded queue.

    Order and content are exactly those of ``items``; producer exceptions are
    re-raised in the consumer.
    """
    if capacity < 1:
        raise ValueError("capacity must be >= 1")
    q: queue.Queue = queue.Queue(maxsize=capacity)
    stop = threading.Event()

    def produce():
        try:
            for item in items:
                while not stop.is_set():
                    try:
                        q.put((item, None), timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop.is_set():
                    return
            q.put((_DONE, None))
        except BaseException as exc:  # noqa: BLE001 - forwarded to the consumer
            q.put((_DONE, exc))

    worker = threading.Thread(target=produce, daemon=True)
    worker.start()
    try:
        while True:
            item, exc = q.get()
            if item is _DONE:
                if exc is not None:
                    raise exc
                return
            yield item
    finally:
        stop.set()
        worker.join(timeout=1.0)
