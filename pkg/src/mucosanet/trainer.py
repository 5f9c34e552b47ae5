"""Training loop, validation-based model selection and weight transfer."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterable, Sequence

import numpy as np

from .architectures import ARCHITECTURES, build_model
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint
from .data.augment import AugmentConfig
from .data.dataset import Batch, LabeledDataset, SplitIndices, batches, prefetch, split_indices
from .graph import ModelGraph
from .optim import NonFiniteError, OptimizerState, adam_step, cross_entropy, loss_gradient

log = logging.getLogger(__name__)

BACKBONE_PREFIX = "backbone."


class LeakError(RuntimeError):
    """A test-split index reached a training or validation iterator."""


@dataclass
class TrainConfig:
    architecture: str = "vgg_mini"
    width: int = 1
    input_size: int = 128
    epochs: int = 50
    patience: int = 10
    batch_size: int = 16
    lr: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    optimizer: str = "literal"
    augment: AugmentConfig | None = field(default_factory=AugmentConfig)
    split_seed: int = 0
    shuffle_seed: int = 0
    init_seed: int = 0
    augment_seed: int = 0
    stratified: bool = False
    freeze_prefixes: list[str] = field(default_factory=list)
    init_checkpoint: str | None = None
    transfer_mode: str = "backbone-only"
    prefetch: int = 2

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.transfer_mode not in ("full", "backbone-only"):
            raise ValueError(f"unknown transfer mode {self.transfer_mode!r}")
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig.from_dict(self.augment)

    @property
    def learning_rate(self) -> float:
        """Explicit ``lr``, else 1e-4 when fine-tuning from a checkpoint and 1e-3 from scratch."""
        if self.lr is not None:
            return self.lr
        return 1e-4 if self.init_checkpoint else 1e-3

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augment"] = self.augment.to_dict() if self.augment else None
        return d


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


def trainable_names(model: ModelGraph, freeze_prefixes: Sequence[str] = ()) -> list[str]:
    prefixes = tuple(freeze_prefixes)
    return [n for n in model.params if not (prefixes and n.startswith(prefixes))]


def train_step(model: ModelGraph, optimizer: OptimizerState, batch: Batch, freeze_prefixes: Sequence[str] = ()) -> float:
    probs = model.forward(batch.images, train=True, frozen=tuple(freeze_prefixes))
    loss = cross_entropy(batch.labels, probs).mean
    if not math.isfinite(loss):
        raise NonFiniteError(f"loss became {loss}")
    _, grads = model.backward(loss_gradient(batch.labels, probs), skip_output=True)
    names = trainable_names(model, freeze_prefixes)
    if names:
        adam_step(optimizer, model.params, grads, names)
    return loss


def train_epoch(model: ModelGraph, optimizer: OptimizerState, batch_iter: Iterable[Batch], freeze_prefixes: Sequence[str] = ()) -> float:
    """One pass over ``batch_iter``; returns the mean of the per-batch mean losses."""
    losses = [train_step(model, optimizer, b, freeze_prefixes) for b in batch_iter]
    if not losses:
        raise ValueError("no training batches")
    return float(np.mean(losses))


def predict(model: ModelGraph, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Class probabilities for ``[N, 3, H, W]`` images, inference mode."""
    out = [model.forward(images[i : i + batch_size], train=False) for i in range(0, len(images), batch_size)]
    return np.concatenate(out).astype(np.float64)


def validate(model: ModelGraph, batch_iter: Iterable[Batch]) -> tuple[float, float]:
    """Mean loss (over samples) and accuracy in inference mode."""
    total, correct, loss_sum = 0, 0, 0.0
    for b in batch_iter:
        probs = model.forward(b.images, train=False)
        loss_sum += float(cross_entropy(b.labels, probs).per_sample.sum())
        correct += int((probs.argmax(axis=1) == b.targets).sum())
        total += len(b.images)
    if total == 0:
        raise ValueError("empty validation set")
    return loss_sum / total, correct / total


def select_best(val_losses: Sequence[float]) -> int:
    """Index of the minimum validation loss; the earliest wins ties."""
    best = 0
    for i, v in enumerate(val_losses):
        if v < val_losses[best]:
            best = i
    return best


def transfer_load(model: ModelGraph, ckpt: Checkpoint, mode: str = "backbone-only") -> ModelGraph:
    """Copy checkpoint tensors into ``model``.

    ``full`` requires identical parameter and buffer sets; ``backbone-only``
    copies every ``backbone.*`` tensor and leaves the rest as initialised.
    """
    if mode not in ("full", "backbone-only"):
        raise ValueError(f"unknown transfer mode {mode!r}")
    for store, src in ((model.params, ckpt.params), (model.buffers, ckpt.buffers)):
        if mode == "full":
            names = list(store)
            missing = set(names) ^ set(src)
            if missing:
                raise CheckpointError(f"full transfer: tensor names differ ({sorted(missing)[:3]}...)")
        else:
            names = [n for n in store if n.startswith(BACKBONE_PREFIX)]
            missing = [n for n in names if n not in src]
            if missing:
                raise CheckpointError(f"backbone transfer: checkpoint lacks {missing[0]!r}")
        for n in names:
            if src[n].shape != store[n].shape:
                raise CheckpointError(f"shape mismatch for {n!r}: checkpoint {src[n].shape} vs model {store[n].shape}")
            store[n] = src[n].astype(store[n].dtype, copy=True)
    return model


def make_model(config: TrainConfig, num_classes: int) -> ModelGraph:
    model = build_model(config.architecture, num_classes, config.input_size, config.width, seed=config.init_seed)
    if config.init_checkpoint:
        ckpt = load_checkpoint(config.init_checkpoint)
        transfer_load(model, ckpt, config.transfer_mode)
    return model


def fit(
    config: TrainConfig,
    dataset: LabeledDataset,
    split: SplitIndices | None = None,
    model: ModelGraph | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[Checkpoint, list[EpochRecord]]:
    """Train and return the checkpoint with the lowest validation loss.

    Stops early after ``config.patience`` epochs without improvement. The test
    split is never read; every index handed to an iterator is audited.
    """
    split = split or split_indices(dataset.labels, config.split_seed, config.stratified)
    if not split.train or not split.val:
        raise ValueError("fit needs at least one training and one validation sample")
    model = model or make_model(config, dataset.num_classes)
    opt = OptimizerState(config.learning_rate, config.beta1, config.beta2, config.eps, config.optimizer)
    audit: set[int] = set()
    records: list[EpochRecord] = []
    best: Checkpoint | None = None
    best_loss = math.inf
    since_best = 0
    for epoch in range(1, config.epochs + 1):
        train_iter = batches(
            dataset, split.train, config.batch_size, config.shuffle_seed, config.augment, config.augment_seed, epoch, audit
        )
        if config.prefetch:
            train_iter = prefetch(train_iter, config.prefetch)
        train_loss = train_epoch(model, opt, train_iter, config.freeze_prefixes)
        val_loss, val_acc = validate(model, batches(dataset, split.val, config.batch_size, audit=audit))
        rec = EpochRecord(epoch, train_loss, val_loss, val_acc)
        records.append(rec)
        log.info("epoch %d: train %.4f val %.4f acc %.4f", epoch, train_loss, val_loss, val_acc)
        if on_epoch:
            on_epoch(rec)
        if not math.isfinite(val_loss):
            raise NonFiniteError(f"validation loss became {val_loss} at epoch {epoch}")
        if val_loss < best_loss:
            best_loss = val_loss
            since_best = 0
            best = Checkpoint.from_model(model, dataset.class_names, {"epoch": epoch, "val_loss": val_loss})
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    if not audit.isdisjoint(split.test):
        raise LeakError("test-split samples were consumed during fit")
    return best, records
