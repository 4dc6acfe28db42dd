"""Grayscale image ingestion.

Two formats are understood (see ``docs/formats.md`` for the byte layout):

* portable graymap, plain (``P2``) and raw (``P5``), maxval up to 65535;
* a raw float matrix: little-endian ``uint32 rows, uint32 cols`` followed by
  ``rows * cols`` little-endian float64 values in row-major order.
"""

from __future__ import annotations

import os
import struct

import numpy as np

RAW_HEADER = struct.Struct("<II")


class ImageFormatError(ValueError):
    pass


def _pgm_tokens(data: bytes, count: int, start: int = 0):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens = []
    i = start
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i >= n:
            raise ImageFormatError("truncated PGM header")
        if data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not data[j : j + 1].isspace():
            j += 1
        tokens.append(data[i:j])
        i = j
    return tokens, i


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 2 or data[:2] not in (b"P2", b"P5"):
        raise ImageFormatError(f"{path}: not a PGM file (magic must be P2 or P5)")
    magic = data[:2]
    (w, h, maxval), end = _pgm_tokens(data, 3, 2)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise ImageFormatError(f"{path}: malformed PGM header") from None
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: invalid PGM dimensions or maxval")
    if magic == b"P2":
        values = data[end:].split()
        # comments may follow the header in plain files too
        values = [v for v in values if not v.startswith(b"#")]
        if len(values) < w * h:
            raise ImageFormatError(f"{path}: expected {w * h} samples, found {len(values)}")
        pixels = np.array([int(v) for v in values[: w * h]], dtype=float)
    else:
        # exactly one whitespace byte separates maxval from the raster
        raster = data[end + 1 :]
        dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
        need = w * h * dtype.itemsize
        if len(raster) < need:
            raise ImageFormatError(f"{path}: raster truncated ({len(raster)} < {need} bytes)")
        pixels = np.frombuffer(raster[:need], dtype=dtype).astype(float)
    return pixels.reshape(h, w) / maxval


def write_pgm(path, pixels, maxval: int = 255, plain: bool = False) -> None:
    """Write intensities in [0, 1] as a PGM file."""
    pixels = np.asarray(pixels, dtype=float)
    if pixels.ndim != 2:
        raise ValueError("PGM images are two-dimensional")
    h, w = pixels.shape
    q = np.clip(np.rint(pixels * maxval), 0, maxval).astype(int)
    header = f"{'P2' if plain else 'P5'}\n{w} {h}\n{maxval}\n".encode()
    with open(path, "wb") as fh:
        fh.write(header)
        if plain:
            for row in q:
                fh.write((" ".join(str(v) for v in row) + "\n").encode())
        else:
            dtype = "u1" if maxval < 256 else ">u2"
            fh.write(q.astype(dtype).tobytes())


def read_raw_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < RAW_HEADER.size:
        raise ImageFormatError(f"{path}: file shorter than the 8-byte header")
    rows, cols = RAW_HEADER.unpack_from(data)
    need = rows * cols * 8
    body = data[RAW_HEADER.size :]
    if rows == 0 or cols == 0 or len(body) != need:
        raise ImageFormatError(f"{path}: header says {rows}x{cols} but body has {len(body)} bytes")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).copy()


def write_raw_matrix(path, matrix) -> None:
    matrix = np.asarray(matrix, dtype="<f8")
    if matrix.ndim != 2:
        raise ValueError("raw matrices are two-dimensional")
    with open(path, "wb") as fh:
        fh.write(RAW_HEADER.pack(*matrix.shape))
        fh.write(np.ascontiguousarray(matrix).tobytes())


def read_image(path) -> np.ndarray:
    """Dispatch on extension: ``.pgm`` or anything else as a raw matrix."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".pgm":
        return read_pgm(path)
    return read_raw_matrix(path)
