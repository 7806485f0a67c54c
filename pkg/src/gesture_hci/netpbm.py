"""Binary netpbm (P5/P6) reading and writing."""
from __future__ import annotations

import os
import re

import numpy as np

_TOKEN = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)")


class NetpbmError(ValueError):
    pass


def _header_tokens(data: bytes, count: int):
    pos = 0
    out = []
    for _ in range(count):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise NetpbmError("truncated netpbm header")
        out.append(m.group(2))
        pos = m.end()
    # exactly one whitespace byte separates header from raster
    return out, pos + 1


def decode(data: bytes) -> np.ndarray:
    """Decode P5/P6 bytes into a uint8 array of shape (h, w) or (h, w, 3)."""
    (magic, w, h, maxval), start = _header_tokens(data, 4)
    if magic not in (b"P5", b"P6"):
        raise NetpbmError(f"unsupported netpbm magic {magic!r}")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise NetpbmError("malformed netpbm header") from exc
    if maxval != 255:
        raise NetpbmError(f"only maxval 255 is supported, got {maxval}")
    if w < 1 or h < 1:
        raise NetpbmError("image dimensions must be positive")
    channels = 3 if magic == b"P6" else 1
    n = w * h * channels
    raster = data[start:start + n]
    if len(raster) != n:
        raise NetpbmError("truncated netpbm raster")
    arr = np.frombuffer(raster, dtype=np.uint8)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return arr.reshape(shape).copy()


def encode(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.dtype == bool:
        img = img.astype(np.uint8) * 255
    if img.dtype != np.uint8:
        raise NetpbmError("netpbm encoding needs uint8 or bool data")
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise NetpbmError(f"cannot encode array of shape {img.shape}")
    h, w = img.shape[:2]
    return magic + b"\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def read(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        return decode(f.read())


def write(path: str | os.PathLike, img: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode(img))
