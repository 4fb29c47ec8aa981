"""
Matrix I/O Module
Reads and writes dense matrices (CSV, MTXB binary) and grayscale PGM images (through Pillow).

MTXB layout: b"MTXB", u32 rows, u32 cols (little-endian), then rows*cols
little-endian float64 values in row-major order.
"""

from __future__ import annotations

import io
import logging
import os
import re
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from PIL import Image

from core import ConfigError

logger = logging.getLogger(__name__)

MTXB_MAGIC = b"MTXB"
_MTXB_HEADER = np.dtype([("rows", "<u4"), ("cols", "<u4")])

PathLike = Union[str, os.PathLike]


class MatrixFormatError(ConfigError):
    """Malformed matrix file; `line` (CSV) or `offset` (binary) locates the problem."""

    def __init__(self, message: str, line: Optional[int] = None, offset: Optional[int] = None):
        where = f" at line {line}" if line is not None else f" at byte offset {offset}" if offset is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line
        self.offset = offset


class PgmFormatError(ConfigError):
    def __init__(self, message: str, offset: Optional[int] = None):
        super().__init__(message if offset is None else f"{message} at byte offset {offset}")
        self.offset = offset


def _format_of(path: PathLike, fmt: Optional[str]) -> str:
    if fmt:
        fmt = fmt.lower()
    else:
        suffix = Path(path).suffix.lower()
        fmt = {".csv": "csv", ".bin": "bin", ".mtxb": "bin", ".pgm": "pgm"}.get(suffix)
    if fmt not in ("csv", "bin", "pgm"):
        raise ConfigError(f"cannot infer matrix format for {path}; use csv, bin or pgm")
    return fmt


# ----- CSV -----

def _read_csv(path: PathLike) -> np.ndarray:
    text = Path(path).read_text()
    if not text.strip():
        raise MatrixFormatError("empty matrix file", line=1)
    try:
        frame = pd.read_csv(io.StringIO(text), header=None, dtype=str, skip_blank_lines=False,
                            keep_default_na=False)
    except pd.errors.ParserError as exc:
        match = re.search(r"line (\d+)", str(exc))
        raise MatrixFormatError(f"ragged row ({exc})", line=int(match.group(1)) if match else None) from exc

    lines = text.splitlines()
    width = None
    for number, raw in enumerate(lines, start=1):
        if raw.strip() == "" and number == len(lines):
            continue
        fields = len(raw.split(","))
        if width is None:
            width = fields
        elif fields != width:
            raise MatrixFormatError(f"ragged row: expected {width} fields, found {fields}", line=number)

    values = np.empty(frame.shape, dtype=np.float64)
    for row in range(frame.shape[0]):
        for col in range(frame.shape[1]):
            cell = frame.iat[row, col].strip()
            try:
                values[row, col] = float(cell)
            except ValueError:
                raise MatrixFormatError(f"non-numeric field {cell!r} in column {col + 1}", line=row + 1) from None
    return values


def _write_csv(path: PathLike, matrix: np.ndarray) -> None:
    pd.DataFrame(matrix).to_csv(path, header=False, index=False, float_format="%.17g", lineterminator="\n")


# ----- MTXB -----

def _read_bin(path: PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise MatrixFormatError("truncated header", offset=len(data))
    if data[:4] != MTXB_MAGIC:
        raise MatrixFormatError(f"bad magic {data[:4]!r}", offset=0)
    header = np.frombuffer(data, dtype=_MTXB_HEADER, count=1, offset=4)[0]
    rows, cols = int(header["rows"]), int(header["cols"])
    expected = 12 + 8 * rows * cols
    if len(data) != expected:
        raise MatrixFormatError(f"payload size mismatch: expected {expected} bytes, found {len(data)}",
                                offset=min(len(data), expected))
    return np.frombuffer(data, dtype="<f8", offset=12).reshape(rows, cols).astype(np.float64)


def _write_bin(path: PathLike, matrix: np.ndarray) -> None:
    header = np.array([(matrix.shape[0], matrix.shape[1])], dtype=_MTXB_HEADER)
    with open(path, "wb") as handle:
        handle.write(MTXB_MAGIC)
        handle.write(header.tobytes())
        handle.write(np.ascontiguousarray(matrix, dtype="<f8").tobytes())


# ----- PGM -----

PGM_MAGICS = (b"P2", b"P5")
_PGM_SCALE = {"L": 255.0, "I": 65535.0, "I;16": 65535.0, "I;16B": 65535.0}


def load_pgm(path: PathLike) -> np.ndarray:
    """Read a P2 or P5 grayscale image, scaled to [0, 1] by maxval."""
    with open(path, "rb") as handle:
        magic = handle.read(2)
    if magic not in PGM_MAGICS:
        raise PgmFormatError(f"unsupported magic {magic.decode('latin-1')!r}", offset=0)
    try:
        with Image.open(path) as pic:
            pic.load()
            mode = pic.mode
            pixels = np.asarray(pic, dtype=np.float64)
    except (OSError, ValueError, SyntaxError) as exc:
        # Pillow reports bad maxval values and short rasters as OSError or ValueError
        raise PgmFormatError(f"malformed PGM {path}: {exc}") from exc
    if mode not in _PGM_SCALE:
        raise PgmFormatError(f"unexpected image mode {mode!r} for a grayscale PGM")
    # Pillow rescales any maxval onto the full 8- or 16-bit range
    return pixels / _PGM_SCALE[mode]


def save_pgm(path: PathLike, image: np.ndarray, maxval: int = 255) -> None:
    """Write an image in [0, 1] as binary P5 with maxval 255 or 65535."""
    if maxval not in (255, 65535):
        raise ConfigError(f"PGM maxval must be 255 or 65535, got {maxval}")
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    pixels = np.rint(image * maxval)
    if maxval == 255:
        pic = Image.fromarray(pixels.astype(np.uint8))
    else:
        pic = Image.fromarray(pixels.astype(np.int32))
    pic.save(path, format="PPM")


# ----- Public entry points -----

def load_matrix(path: PathLike, fmt: Optional[str] = None) -> np.ndarray:
    """Load a dense matrix; `fmt` is csv, bin or pgm (inferred from the extension when omitted)."""
    if not Path(path).exists():
        raise ConfigError(f"matrix file not found: {path}")
    fmt = _format_of(path, fmt)
    if fmt == "csv":
        matrix = _read_csv(path)
    elif fmt == "bin":
        matrix = _read_bin(path)
    else:
        matrix = load_pgm(path)
    logger.debug("loaded %s matrix %s from %s", fmt, matrix.shape, path)
    return matrix


def save_matrix(path: PathLike, matrix: np.ndarray, fmt: Optional[str] = None) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if matrix.ndim != 2:
        raise ConfigError(f"only 2-D matrices can be saved, got shape {matrix.shape}")
    fmt = _format_of(path, fmt)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        _write_csv(path, matrix)
    elif fmt == "bin":
        _write_bin(path, matrix)
    else:
        save_pgm(path, matrix)
