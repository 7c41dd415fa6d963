"""Grayscale PFM (portable float map) reading and writing.

Files are written little-endian (scale ``-1.0``) with rows stored bottom to
top, as the format prescribes. Invalid pixels are stored as NaN.
"""

from __future__ import annotations

import os
import re
import tempfile
from pathlib import Path

import numpy as np

from .maps import DepthMap, VarianceMap


class PFMError(ValueError):
    pass


_HEADER = re.compile(rb"^(P[Ff])\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s")


def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM into a float64 array of shape (H, W), top row first."""
    data = Path(path).read_bytes()
    m = _HEADER.match(data)
    if m is None:
        raise PFMError(f"{path}: malformed PFM header")
    kind, width, height, scale = m.group(1), int(m.group(2)), int(m.group(3)), m.group(4)
    if kind != b"Pf":
        raise PFMError(f"{path}: only grayscale 'Pf' files are supported")
    try:
        scale = float(scale)
    except ValueError:
        raise PFMError(f"{path}: bad scale field {scale!r}") from None
    if scale == 0 or width == 0 or height == 0:
        raise PFMError(f"{path}: zero scale or empty image")
    dtype = np.dtype("<f4" if scale < 0 else ">f4")
    body = data[m.end() :]
    expected = width * height * 4
    if len(body) != expected:
        raise PFMError(f"{path}: expected {expected} data bytes, found {len(body)}")
    img = np.frombuffer(body, dtype=dtype).reshape(height, width)
    return np.flipud(img).astype(np.float64)


def atomic_write_bytes(path, payload: bytes):
    """Write via a temp file in the same directory and rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_pfm(values: np.ndarray) -> bytes:
    values = np.asarray(values)
    if values.ndim != 2:
        raise PFMError("only 2-D grayscale maps can be written")
    height, width = values.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode("ascii")
    return header + np.flipud(values).astype("<f4").tobytes()


def write_pfm(path, values: np.ndarray):
    atomic_write_bytes(path, encode_pfm(values))


def read_depth(path) -> DepthMap:
    return DepthMap.from_array(read_pfm(path))


def read_variance(path) -> VarianceMap:
    return VarianceMap.from_array(read_pfm(path))


def write_map(path, m: DepthMap):
    write_pfm(path, m.to_array())
