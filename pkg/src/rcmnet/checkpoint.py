"""Bit-exact binary checkpoints.

Layout (all integers little-endian)::

    b"RCMN"                      magic
    u32  version (= 1)
    u16  len, utf-8              architecture id
    u32                          class count
    u32                          tensor count
    per tensor:
        u16 len, utf-8           dotted name
        u8                       dtype (0 = float64, 1 = float32)
        u8                       rank
        rank x u32               extents
        payload                  row-major little-endian elements

Batch-norm running statistics are stored as ordinary named tensors.
"""

from __future__ import annotations

import io
import os
import struct
from typing import Optional, Union

import numpy as np

from .errors import CheckpointError
from .model import BASE_WIDTHS, ResNetVariant

MAGIC = b"RCMN"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_TAGS = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}

PathLike = Union[str, os.PathLike]


def encode(arch: str, num_classes: int, tensors: list[tuple[str, np.ndarray]]) -> bytes:
    buf = io.BytesIO()
    arch_b = arch.encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<IH", VERSION, len(arch_b)))
    buf.write(arch_b)
    buf.write(struct.pack("<II", num_classes, len(tensors)))
    for name, arr in tensors:
        arr = np.asarray(arr)
        if arr.dtype not in _TAGS:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        name_b = name.encode("utf-8")
        buf.write(struct.pack("<H", len(name_b)))
        buf.write(name_b)
        buf.write(struct.pack("<BB", _TAGS[arr.dtype], arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[_TAGS[arr.dtype]]).tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(data: bytes) -> tuple[str, int, list[tuple[str, np.ndarray]]]:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("bad magic: not an RCMN checkpoint")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (alen,) = r.unpack("<H", "architecture id")
    arch = r.take(alen, "architecture id").decode("utf-8")
    num_classes, count = r.unpack("<II", "header")
    tensors = []
    for _ in range(count):
        (nlen,) = r.unpack("<H", "tensor name")
        name = r.take(nlen, "tensor name").decode("utf-8")
        tag, rank = r.unpack("<BB", f"header of {name!r}")
        if tag not in _DTYPES:
            raise CheckpointError(f"tensor {name!r}: unknown dtype tag {tag}")
        shape = r.unpack(f"<{rank}I", f"extents of {name!r}")
        dt = _DTYPES[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(r.take(nbytes, f"payload of {name!r}"), dtype=dt).reshape(shape)
        tensors.append((name, arr.astype(dt.newbyteorder("="))))
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after last tensor")
    return arch, num_classes, tensors


def save_checkpoint(model: ResNetVariant, path: PathLike) -> None:
    data = encode(model.arch, model.num_classes, list(model.state_items()))
    with open(path, "wb") as fh:
        fh.write(data)


def read_checkpoint(path: PathLike) -> tuple[str, int, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        arch, num_classes, tensors = decode(fh.read())
    return arch, num_classes, dict(tensors)


def load_state(model: ResNetVariant, tensors: dict[str, np.ndarray], skip: tuple = ()) -> None:
    """Copy named arrays into ``model`` in place; names must match exactly.

    Names starting with any prefix in ``skip`` are neither required nor copied.
    """
    own = dict(model.state_items())

    def skipped(name: str) -> bool:
        return bool(skip) and name.startswith(skip)

    for name, arr in tensors.items():
        if skipped(name):
            continue
        if name not in own:
            raise CheckpointError(f"unknown tensor name {name!r} for architecture {model.arch}")
        if own[name].shape != arr.shape:
            raise CheckpointError(f"tensor {name!r}: shape {arr.shape} != model shape {own[name].shape}")
    missing = [n for n in own if n not in tensors and not skipped(n)]
    if missing:
        raise CheckpointError(f"checkpoint is missing tensor {missing[0]!r}")
    for name, arr in tensors.items():
        if skipped(name):
            continue
        dst = own[name]
        if dst.dtype != arr.dtype:
            raise CheckpointError(f"tensor {name!r}: dtype {arr.dtype} != model dtype {dst.dtype}")
        dst[...] = arr


def model_from_tensors(arch: str, num_classes: int, tensors: dict[str, np.ndarray],
                       input_side: Optional[int] = None) -> ResNetVariant:
    """Rebuild the architecture whose shapes match ``tensors`` (no data copied)."""
    if "conv1.weight" not in tensors:
        raise CheckpointError("checkpoint is missing tensor 'conv1.weight'")
    w0 = tensors["conv1.weight"].shape[0]
    if w0 == 0 or BASE_WIDTHS[0] % w0:
        raise CheckpointError(f"conv1 width {w0} does not divide {BASE_WIDTHS[0]}")
    width_div = BASE_WIDTHS[0] // w0
    reduction = 16
    fc1 = [t for n, t in tensors.items() if n.endswith("cbam.channel.fc1.weight")]
    if fc1:
        widest = max(fc1, key=lambda t: t.shape[1])
        reduction = max(widest.shape[1] // widest.shape[0], 1)
    feat_side = None
    rel_h = tensors.get("layer5.mhsa.rel_h")
    if rel_h is not None:
        feat_side = (rel_h.shape[0] + 1) // 2
    try:
        return ResNetVariant(arch, num_classes, input_side, np.random.default_rng(0), width_div=width_div,
                             reduction=reduction, feat_side=feat_side, dtype=tensors["conv1.weight"].dtype)
    except Exception as exc:  # config errors surface as checkpoint problems here
        raise CheckpointError(f"cannot rebuild {arch!r} from checkpoint: {exc}") from exc


def load_checkpoint(path: PathLike, model: Optional[ResNetVariant] = None,
                    input_side: Optional[int] = None) -> ResNetVariant:
    """Load a checkpoint, either into ``model`` or into a freshly rebuilt one."""
    arch, num_classes, tensors = read_checkpoint(path)
    if model is None:
        model = model_from_tensors(arch, num_classes, tensors, input_side)
    load_state(model, tensors)
    return model
