"""Command-line front end: train, eval, predict, stream, selfcheck.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from typing import Iterator, Sequence

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data.dataset import DatasetError, load_dataset, read_manifest, split_indices, write_manifest
from .data.io import ImageFormatError, is_image_file, load_image
from .data.resize import preprocess
from .metrics import (
    check_published_consistency,
    confusion,
    per_class_metrics,
    render_report,
    write_prediction_log,
)
from .optim import OptimizerState, adam_step, cross_entropy
from .trainer import EpochRecord, TrainConfig, fit, predict

log = logging.getLogger("mucosanet")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

CHECKPOINT_NAME = "model.ckpt"
EPOCHS_NAME = "epochs.csv"
MANIFEST_NAME = "split.tsv"
CONFIG_NAME = "config.json"
EPOCH_HEADER = ["epoch", "train_loss", "val_loss", "val_accuracy"]


class UsageError(Exception):
    """Bad arguments, paths or configuration (exit code 2)."""


# --------------------------------------------------------------------------- train


_OVERRIDES = {
    "architecture": str,
    "width": int,
    "input_size": int,
    "epochs": int,
    "patience": int,
    "batch_size": int,
    "lr": float,
    "optimizer": str,
    "split_seed": int,
    "shuffle_seed": int,
    "init_seed": int,
    "augment_seed": int,
    "init_checkpoint": str,
    "transfer_mode": str,
    "prefetch": int,
}


def resolve_config(path: str | None, overrides: dict, no_augment: bool = False) -> TrainConfig:
    """JSON file values, then non-None flag values on top; ``no_augment`` wins last."""
    values = {}
    if path:
        if not os.path.isfile(path):
            raise UsageError(f"config file not found: {path}")
        try:
            with open(path, encoding="utf-8") as fh:
                values = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(values, dict):
            raise UsageError(f"{path}: expected a JSON object")
    values.update({k: v for k, v in overrides.items() if v is not None})
    if no_augment:
        values["augment"] = None
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad training config: {exc}") from None


def _fmt(x: float) -> str:
    return repr(float(x))


def cmd_train(args) -> int:
    overrides = {k: getattr(args, k) for k in _OVERRIDES}
    if args.freeze:
        overrides["freeze_prefixes"] = args.freeze
    if args.stratified:
        overrides["stratified"] = True
    config = resolve_config(args.config, overrides, args.no_augment)
    dataset = load_dataset(args.data, size=config.input_size)
    if config.init_checkpoint and not os.path.isfile(config.init_checkpoint):
        raise UsageError(f"init checkpoint not found: {config.init_checkpoint}")
    os.makedirs(args.out, exist_ok=True)

    split = split_indices(dataset.labels, config.split_seed, config.stratified)
    write_manifest(os.path.join(args.out, MANIFEST_NAME), dataset, split)
    with open(os.path.join(args.out, CONFIG_NAME), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    with open(os.path.join(args.out, EPOCHS_NAME), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EPOCH_HEADER)

        def on_epoch(rec: EpochRecord):
            writer.writerow([rec.epoch, _fmt(rec.train_loss), _fmt(rec.val_loss), _fmt(rec.val_accuracy)])
            fh.flush()
            print(f"epoch {rec.epoch}: train_loss={rec.train_loss:.4f} val_loss={rec.val_loss:.4f} val_acc={rec.val_accuracy:.4f}")

        best, records = fit(config, dataset, split, on_epoch=on_epoch)
    best.metadata["config"] = config.to_dict()
    save_checkpoint(best, os.path.join(args.out, CHECKPOINT_NAME))
    print(f"best epoch {best.metadata['epoch']} (val_loss={best.metadata['val_loss']:.4f}); wrote {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------- eval


def _inside(path: str, root: str) -> bool:
    path, root = os.path.realpath(path), os.path.realpath(root)
    return os.path.commonpath([path, root]) == root


def cmd_eval(args) -> int:
    if _inside(args.out, args.data):
        raise UsageError("refusing to write evaluation outputs inside the dataset directory")
    if not os.path.isfile(args.ckpt):
        raise UsageError(f"checkpoint not found: {args.ckpt}")
    if not os.path.isfile(args.manifest):
        raise UsageError(f"manifest not found: {args.manifest}")
    ckpt = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data, size=ckpt.descriptor["input_size"])
    if dataset.class_names != ckpt.class_names:
        raise UsageError(f"dataset classes {dataset.class_names} differ from checkpoint classes {ckpt.class_names}")
    indices = read_manifest(args.manifest, dataset).of(args.split)
    if not indices:
        raise UsageError(f"manifest marks no {args.split!r} samples")

    model = ckpt.build_model()
    images = np.stack([dataset.image(i) for i in indices])
    probs = predict(model, images, args.batch_size)
    labels = [dataset.samples[i].label for i in indices]
    preds = probs.argmax(axis=1).tolist()
    cm = confusion(labels, preds, ckpt.class_names)
    report = per_class_metrics(cm, model=ckpt.descriptor["architecture"])

    os.makedirs(args.out, exist_ok=True)
    for fmt, name in (("table", "report.txt"), ("csv", "report.csv"), ("json", "report.json")):
        with open(os.path.join(args.out, name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(render_report(report, fmt))
    with open(os.path.join(args.out, "confusion.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(cm.to_csv())
    with open(os.path.join(args.out, "predictions.csv"), "w", encoding="utf-8", newline="\n") as fh:
        write_prediction_log(fh, [dataset.relpath(i) for i in indices], labels, preds, probs, ckpt.class_names)
    sys.stdout.write(render_report(report, "table"))
    return EXIT_OK


# --------------------------------------------------------------------------- predict


def _load_model(path: str):
    if not os.path.isfile(path):
        raise UsageError(f"checkpoint not found: {path}")
    ckpt = load_checkpoint(path)
    return ckpt, ckpt.build_model()


def _classify(model, img: np.ndarray, size: int) -> np.ndarray:
    return predict(model, preprocess(img, size)[None])[0]


def cmd_predict(args) -> int:
    ckpt, model = _load_model(args.ckpt)
    size = ckpt.descriptor["input_size"]
    ok = 0
    for path in args.images:
        try:
            probs = _classify(model, load_image(path), size)
        except (OSError, ImageFormatError) as exc:
            print(f"{path}: error: {exc}", file=sys.stderr)
            continue
        top = int(probs.argmax())
        print(",".join([path, ckpt.class_names[top]] + [f"{p:.9g}" for p in probs]))
        ok += 1
    return EXIT_OK if ok else EXIT_FAILURE


# --------------------------------------------------------------------------- stream


def poll_frames(
    directory: str,
    poll_s: float,
    idle_timeout_s: float,
    sentinel: str,
    stop_after: int | None = None,
    warn=lambda msg: print(msg, file=sys.stderr),
) -> Iterator[str]:
    """Yield image paths from ``directory`` in name order as they appear.

    Ends when the sentinel file exists and every frame before it has been
    yielded, after ``stop_after`` frames, or when no new frame shows up for
    ``idle_timeout_s``.
    """
    seen: set[str] = set()
    yielded = 0
    last_new = time.monotonic()
    while True:
        names = sorted(os.listdir(directory))
        done = sentinel in names
        fresh = [n for n in names if n not in seen and n != sentinel]
        for name in fresh:
            seen.add(name)
            path = os.path.join(directory, name)
            if not os.path.isfile(path):
                continue
            if not is_image_file(name):
                warn(f"warning: skipping non-image file {name}")
                continue
            yield path
            yielded += 1
            if stop_after is not None and yielded >= stop_after:
                return
        if fresh:
            last_new = time.monotonic()
        if done or time.monotonic() - last_new >= idle_timeout_s:
            return
        time.sleep(poll_s)


def cmd_stream(args) -> int:
    if not os.path.isdir(args.frames):
        raise UsageError(f"frame directory not found: {args.frames}")
    if args.fps <= 0 or args.poll_ms < 0:
        raise UsageError("--fps must be positive and --poll-ms non-negative")
    ckpt, model = _load_model(args.ckpt)
    size = ckpt.descriptor["input_size"]
    counts = dict.fromkeys(ckpt.class_names, 0)
    out = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["timestamp", "frame", "class", "probability"])
        frames = poll_frames(args.frames, args.poll_ms / 1000, args.idle_timeout_ms / 1000, args.sentinel, args.stop_after)
        index = 0
        for path in frames:
            try:
                probs = _classify(model, load_image(path), size)
            except (OSError, ImageFormatError) as exc:
                print(f"warning: skipping unreadable frame {os.path.basename(path)}: {exc}", file=sys.stderr)
                continue
            top = int(probs.argmax())
            writer.writerow([f"{index / args.fps:.3f}", os.path.basename(path), ckpt.class_names[top], f"{probs[top]:.6f}"])
            out.flush()
            counts[ckpt.class_names[top]] += 1
            index += 1
    finally:
        if out is not sys.stdout:
            out.close()
    summary = " ".join(f"{name}={n}" for name, n in counts.items())
    print(f"summary: frames={index} {summary}", file=sys.stderr if not args.out else sys.stdout)
    if index == 0:
        print(f"error: no frames found in {args.frames}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


# --------------------------------------------------------------------------- selfcheck

HAND_STEP_THETA1 = 0.6837727
UNIFORM_LOSS = math.log(8)
EXPECTED_FLAGS = {("ResNet", "Normal Z-Line", "f1"), ("ResNet", "overall", "accuracy")}


def selfcheck_items() -> list[tuple[str, bool, str]]:
    items = []

    state = OptimizerState(lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
    params = {"theta": np.array([1.0])}
    adam_step(state, params, {"theta": np.array([2.0])})
    theta1 = float(params["theta"][0])
    items.append(("optimizer hand step", abs(theta1 - HAND_STEP_THETA1) <= 1e-6, f"theta1={theta1:.7f} expected {HAND_STEP_THETA1}"))

    y = np.eye(8)[[3]]
    loss = cross_entropy(y, np.full((1, 8), 1 / 8)).mean
    items.append(("uniform-prediction loss", abs(loss - UNIFORM_LOSS) <= 1e-6, f"loss={loss:.7f} expected ln 8={UNIFORM_LOSS:.7f}"))
    loss = cross_entropy(y, y).mean
    items.append(("one-hot prediction loss", loss <= 1e-9, f"loss={loss:.3g}"))

    rows = check_published_consistency()
    flagged = {(r.model, r.row, r.metric) for r in rows if r.flagged}
    for r in rows:
        if r.flagged:
            note = "expected" if (r.model, r.row, r.metric) in EXPECTED_FLAGS else "unexpected"
            print(f"  flag ({note}): {r.model} {r.row} {r.metric} recomputed {r.recomputed:.3f} vs published {r.published:g}")
    items.append(
        ("published table consistency", flagged == EXPECTED_FLAGS, f"{len(rows)} rows checked, {len(flagged)} flagged")
    )
    return items


def cmd_selfcheck(args) -> int:
    items = selfcheck_items()
    for name, ok, detail in items:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in items) else EXIT_FAILURE


# --------------------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mucosanet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write checkpoint, epoch log and split manifest")
    t.add_argument("--data", required=True, help="dataset root with one subdirectory per class")
    t.add_argument("--config", help="JSON file with training config fields")
    t.add_argument("--out", required=True, help="output directory")
    for name, typ in _OVERRIDES.items():
        t.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    t.add_argument("--freeze", action="append", help="parameter-name prefix to freeze (repeatable)")
    t.add_argument("--no-augment", action="store_true", help="disable augmentation")
    t.add_argument("--stratified", action="store_true", help="stratify the split by class")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on one split of a manifest")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.add_argument("--batch-size", type=int, default=16)
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="classify image files")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("images", nargs="+")
    pr.set_defaults(func=cmd_predict)

    s = sub.add_parser("stream", help="classify frames of a directory in name order")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--frames", required=True)
    s.add_argument("--poll-ms", type=int, default=200, help="directory polling interval")
    s.add_argument("--stop-after", type=int, default=None, help="stop after this many frames")
    s.add_argument("--idle-timeout-ms", type=int, default=2000, help="stop when no new frame appears for this long")
    s.add_argument("--sentinel", default="STOP", help="file name that ends the stream")
    s.add_argument("--fps", type=float, default=25.0, help="frame rate used for timestamps")
    s.add_argument("--out", help="CSV output file (default stdout)")
    s.set_defaults(func=cmd_stream)

    c = sub.add_parser("selfcheck", help="run built-in optimizer, loss and published-table checks")
    c.set_defaults(func=cmd_selfcheck)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, FileNotFoundError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, ImageFormatError, ArithmeticError, RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
