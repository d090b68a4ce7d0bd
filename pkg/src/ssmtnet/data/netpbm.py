"""Binary PGM (P5) and PPM (P6) reading and writing, 8-bit only."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Union

import numpy as np

from ..errors import FormatError

PathLike = Union[str, os.PathLike]


def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens: list[bytes] = []
    i = 0
    n = len(buf)
    while len(tokens) < count:
        while i < n and buf[i:i + 1].isspace():
            i += 1
        if i >= n:
            raise FormatError("truncated netpbm header")
        if buf[i:i + 1] == b"#":
            while i < n and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not buf[i:i + 1].isspace():
            i += 1
        tokens.append(buf[start:i])
    # exactly one whitespace byte separates the header from the raster
    return tokens, i + 1


def _parse(buf: bytes, magic: bytes, channels: int, path) -> np.ndarray:
    (m, w, h, maxval), offset = _tokens(buf, 4)
    if m != magic:
        raise FormatError(f"{path}: expected magic {magic.decode()}, found {m!r}")
    try:
        width, height, maxv = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed header") from exc
    if maxv != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, found {maxv}")
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: invalid dimensions {width}x{height}")
    expected = width * height * channels
    raster = buf[offset:offset + expected]
    if len(raster) != expected:
        raise FormatError(f"{path}: raster has {len(raster)} bytes, expected {expected}")
    arr = np.frombuffer(raster, dtype=np.uint8)
    shape = (height, width) if channels == 1 else (height, width, channels)
    return arr.reshape(shape).copy()


def _read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror}") from exc


def read_pgm_u8(path: PathLike) -> np.ndarray:
    """Return the raw ``uint8`` raster of a P5 file."""
    return _parse(_read_bytes(path), b"P5", 1, path)


def read_pgm(path: PathLike, as_mask: bool = False) -> np.ndarray:
    """Read a P5 file as float32 in [0, 1], or as a {0, 1} mask if ``as_mask``."""
    raw = read_pgm_u8(path)
    if as_mask:
        return (raw >= 128).astype(np.uint8)
    return raw.astype(np.float32) / 255.0


def to_u8(image: np.ndarray, mask: bool = False) -> np.ndarray:
    """Quantize to bytes.

    Masks (``mask=True`` or bool dtype) map {0,1} to {0,255}; uint8 data is
    kept verbatim; floats in [0,1] become ``round(v * 255)``.
    """
    image = np.asarray(image)
    if mask or image.dtype == bool:
        return np.where(image > 0, 255, 0).astype(np.uint8)
    if image.dtype == np.uint8:
        return image
    return np.clip(np.round(image.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path: PathLike, image: np.ndarray, mask: bool = False) -> None:
    data = to_u8(image, mask=mask)
    if data.ndim != 2:
        raise FormatError(f"PGM needs a 2-D image, got shape {data.shape}")
    h, w = data.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + data.tobytes())


def read_ppm(path: PathLike) -> np.ndarray:
    """Read a P6 file as an ``H×W×3`` uint8 array."""
    return _parse(_read_bytes(path), b"P6", 3, path)


def write_ppm(path: PathLike, rgb: np.ndarray) -> None:
    data = np.asarray(rgb)
    if data.ndim != 3 or data.shape[2] != 3 or data.dtype != np.uint8:
        raise FormatError(f"PPM needs an H×W×3 uint8 array, got {data.shape} {data.dtype}")
    h, w, _ = data.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(data).tobytes())
