"""Binary NetPBM (P5 grayscale, P6 color) with maxval 255."""

from __future__ import annotations

import os
from typing import Union

import numpy as np

from .errors import FormatError

PathLike = Union[str, os.PathLike]
_WS = b" \t\r\n\v\f"


def _header(data: bytes, where: str) -> tuple[bytes, list[int], int]:
    """Parse magic + three integers; return (magic, [w, h, maxval], payload offset)."""
    if len(data) < 2 or data[:1] != b"P":
        raise FormatError(f"{where}: not a NetPBM file")
    magic = data[:2]
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        # skip whitespace and comments
        while pos < len(data) and (data[pos] in _WS or data[pos : pos + 1] == b"#"):
            if data[pos : pos + 1] == b"#":
                end = data.find(b"\n", pos)
                pos = len(data) if end < 0 else end + 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError(f"{where}: malformed header")
        fields.append(int(data[start:pos]))
    if pos >= len(data) or data[pos] not in _WS:
        raise FormatError(f"{where}: malformed header (no whitespace after maxval)")
    return magic, fields, pos + 1


def decode(data: bytes, where: str = "<bytes>") -> np.ndarray:
    """Decode to a uint8 array of shape [3, H, W]; P5 is replicated to 3 channels."""
    magic, (w, h, maxval), off = _header(data, where)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{where}: unsupported NetPBM type {magic.decode('ascii', 'replace')}")
    if maxval != 255:
        raise FormatError(f"{where}: maxval {maxval} unsupported (need 255)")
    if w < 1 or h < 1:
        raise FormatError(f"{where}: empty image {w}x{h}")
    channels = 3 if magic == b"P6" else 1
    need = w * h * channels
    payload = data[off : off + need]
    if len(payload) < need:
        raise FormatError(f"{where}: truncated payload ({len(payload)} of {need} bytes)")
    arr = np.frombuffer(payload, dtype=np.uint8)
    if channels == 3:
        return arr.reshape(h, w, 3).transpose(2, 0, 1).copy()
    return np.repeat(arr.reshape(1, h, w), 3, axis=0)


def encode(img: np.ndarray) -> bytes:
    """P6 for [3, H, W] arrays, P5 for [H, W] arrays (uint8)."""
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise FormatError(f"NetPBM encoder needs uint8 data, got {img.dtype}")
    if img.ndim == 2:
        h, w = img.shape
        return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()
    if img.ndim == 3 and img.shape[0] == 3:
        _, h, w = img.shape
        return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img.transpose(1, 2, 0)).tobytes()
    raise FormatError(f"cannot encode array of shape {img.shape}")


def read(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read(), str(path))


def write(path: PathLike, img: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(img))
