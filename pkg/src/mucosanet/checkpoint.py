"""Binary checkpoint format.

Layout::

    b"KVF1"
    uint64 little-endian header length
    UTF-8 JSON header: version, architecture descriptor, class names,
        tensor directory [{name, role, shape, dtype, offset, nbytes}], metadata
    raw little-endian float32 payloads in directory order
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .architectures import build_model
from .graph import ModelGraph

MAGIC = b"KVF1"
VERSION = 1
_LEN = struct.Struct("<Q")
_DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class DescriptorMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    descriptor: dict
    class_names: list[str]
    params: "OrderedDict[str, np.ndarray]"
    buffers: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    metadata: dict = field(default_factory=dict)
    version: int = VERSION

    @classmethod
    def from_model(cls, model: ModelGraph, class_names, metadata: dict | None = None) -> "Checkpoint":
        cast = lambda store: OrderedDict((k, np.array(v, dtype=np.float32)) for k, v in store.items())  # noqa: E731
        return cls(dict(model.descriptor), list(class_names), cast(model.params), cast(model.buffers), dict(metadata or {}))

    def build_model(self) -> ModelGraph:
        d = self.descriptor
        model = build_model(d["architecture"], d["num_classes"], d["input_size"], d["width"], seed=None)
        model.params.update((k, v.copy()) for k, v in self.params.items())
        model.buffers.update((k, v.copy()) for k, v in self.buffers.items())
        if list(model.param_spec()) != list(model.params):
            raise CorruptCheckpointError("checkpoint parameters do not match its architecture")
        return model


def to_bytes(ckpt: Checkpoint) -> bytes:
    directory, payload, offset = [], [], 0
    for role, store in (("param", ckpt.params), ("buffer", ckpt.buffers)):
        for name, arr in store.items():
            data = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
            directory.append({"name": name, "role": role, "shape": list(arr.shape), "dtype": "float32", "offset": offset, "nbytes": len(data)})
            payload.append(data)
            offset += len(data)
    header = {
        "version": ckpt.version,
        "architecture": ckpt.descriptor,
        "class_names": ckpt.class_names,
        "tensors": directory,
        "metadata": ckpt.metadata,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + _LEN.pack(len(blob)) + blob + b"".join(payload)


def from_bytes(raw: bytes) -> Checkpoint:
    if raw[:4] != MAGIC:
        raise BadMagicError("not a checkpoint file (bad magic bytes)")
    if len(raw) < 4 + _LEN.size:
        raise CorruptCheckpointError("truncated header length")
    (hlen,) = _LEN.unpack_from(raw, 4)
    start = 4 + _LEN.size
    if len(raw) < start + hlen:
        raise CorruptCheckpointError("truncated header")
    try:
        header = json.loads(raw[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"unreadable header: {exc}") from exc
    if header.get("version") != VERSION:
        raise VersionMismatchError(f"checkpoint version {header.get('version')} unsupported (expected {VERSION})")
    body = memoryview(raw)[start + hlen :]
    params, buffers = OrderedDict(), OrderedDict()
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        expected = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
        if entry["dtype"] != "float32" or entry["nbytes"] != expected:
            raise CorruptCheckpointError(f"{entry['name']}: byte length {entry['nbytes']} disagrees with shape {shape}")
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(body):
            raise CorruptCheckpointError(f"{entry['name']}: payload truncated")
        arr = np.frombuffer(body[lo:hi], dtype=_DTYPE).reshape(shape).astype(np.float32)
        (params if entry["role"] == "param" else buffers)[entry["name"]] = arr
    return Checkpoint(header["architecture"], header["class_names"], params, buffers, header.get("metadata", {}), header["version"])


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(ckpt))


def load_checkpoint(path: str, expect: dict | None = None) -> Checkpoint:
    """Read ``path``; with ``expect``, every key given must match the stored descriptor."""
    with open(path, "rb") as fh:
        ckpt = from_bytes(fh.read())
    if expect:
        diff = {k: (ckpt.descriptor.get(k), v) for k, v in expect.items() if ckpt.descriptor.get(k) != v}
        if diff:
            raise DescriptorMismatchError(f"checkpoint architecture differs from the requested one: {diff}")
    return ckpt
