"""File formats: SPMX matrices, PGM/PPM images, label files and traces.

SPMX layout (little-endian): magic ``b"SPMX"``, u32 version (1), u64 rows,
u64 cols, then ``rows * cols`` float64 values in column-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import SparseKitError

MAGIC = b"SPMX"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


class FormatError(SparseKitError):
    """Malformed input file."""


def spmx_dumps(M) -> bytes:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 1:
        M = M[:, None]
    if M.ndim != 2:
        raise SparseKitError("SPMX stores 2-D matrices only")
    rows, cols = M.shape
    return _HEADER.pack(MAGIC, VERSION, rows, cols) + M.astype("<f8").tobytes(order="F")


def spmx_loads(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError("SPMX file is truncated")
    magic, version, rows, cols = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad SPMX magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported SPMX version {version}")
    n = rows * cols
    if len(buf) != _HEADER.size + 8 * n:
        raise FormatError(f"SPMX payload has {len(buf) - _HEADER.size} bytes, "
                          f"expected {8 * n}")
    vals = np.frombuffer(buf, dtype="<f8", count=n, offset=_HEADER.size)
    M = vals.reshape((rows, cols), order="F").astype(np.float64)
    if not np.all(np.isfinite(M)):
        raise FormatError("SPMX matrix has non-finite values")
    return M


def write_spmx(path, M) -> None:
    Path(path).write_bytes(spmx_dumps(M))


def read_spmx(path) -> np.ndarray:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    return spmx_loads(buf)


def read_image(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) file as float64 on [0, 255].

    Grayscale images come back as ``(h, w)``, RGB as ``(h, w, 3)``.
    """
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            if im.format not in ("PPM",):
                raise FormatError(f"{path}: expected PGM/PPM, got {im.format}")
            if im.mode not in ("L", "RGB"):
                raise FormatError(f"{path}: unsupported mode {im.mode}")
            arr = np.asarray(im, dtype=np.float64)
    except (OSError, UnidentifiedImageError) as exc:
        raise FormatError(f"cannot read image {path}: {exc}") from exc
    return arr


def write_image(path, img) -> None:
    """Write an image clamped and rounded to 8 bits (P5 or P6 by channels)."""
    from PIL import Image

    arr = np.clip(np.rint(np.asarray(img, dtype=np.float64)), 0, 255).astype(np.uint8)
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode=mode).save(path, format="PPM")


def read_labels(path) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    try:
        return np.array([int(t) for t in text.split()], dtype=np.int64)
    except ValueError as exc:
        raise FormatError(f"{path}: labels must be integers") from exc


def write_labels(path, labels) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels))


def write_trace(path, objectives, events=()) -> None:
    """Line-oriented learning trace: ``iter<TAB>objective`` then event lines."""
    lines = ["iter\tobjective"]
    lines += [f"{i}\t{v:.17g}" for i, v in enumerate(objectives)]
    lines += [f"# {e}" for e in events]
    Path(path).write_text("\n".join(lines) + "\n")


def write_tsv(path, header, rows) -> None:
    out = ["\t".join(header)]
    for row in rows:
        out.append("\t".join(f"{v:.4f}" if isinstance(v, float) else str(v) for v in row))
    Path(path).write_text("\n".join(out) + "\n")
