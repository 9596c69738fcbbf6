"""On-disk formats: WMAT matrix container, IDX reader, PGM writer, CSV.

WMAT layout (little-endian): magic ``WMAT``, u32 version = 1, u64 rows,
u64 cols, then rows*cols float64 values in row-major order.  The header is
exactly 24 bytes.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

WMAT_MAGIC = b"WMAT"
WMAT_VERSION = 1
WMAT_HEADER = struct.Struct("<4sIQQ")

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


def save_matrix(path, matrix) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise FormatError(f"WMAT stores 2-D matrices, got ndim={matrix.ndim}")
    rows, cols = matrix.shape
    with open(path, "wb") as handle:
        handle.write(WMAT_HEADER.pack(WMAT_MAGIC, WMAT_VERSION, rows, cols))
        handle.write(np.ascontiguousarray(matrix).astype("<f8").tobytes())


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as handle:
        header = handle.read(WMAT_HEADER.size)
        if len(header) < WMAT_HEADER.size:
            raise FormatError(
                f"truncated WMAT header: expected {WMAT_HEADER.size} bytes, "
                f"got {len(header)} (offset 0)"
            )
        magic, version, rows, cols = WMAT_HEADER.unpack(header)
        if magic != WMAT_MAGIC:
            raise FormatError(f"bad WMAT magic {magic!r} at offset 0")
        if version != WMAT_VERSION:
            raise FormatError(f"unsupported WMAT version {version} at offset 4")
        payload = handle.read()
    expected = rows * cols * 8
    if len(payload) != expected:
        raise FormatError(
            f"WMAT payload length {len(payload)} != expected {expected} "
            f"(offset {WMAT_HEADER.size})"
        )
    data = np.frombuffer(payload, dtype="<f8")
    return data.reshape(rows, cols).astype(np.float64)


# ---------------------------------------------------------------------------
# IDX (MNIST-style) files


def read_idx(path) -> np.ndarray:
    """Read an IDX file of unsigned bytes into an ndarray."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"truncated IDX header in {path} (offset 0)")
    magic = int.from_bytes(raw[0:4], "big")
    if raw[0] != 0 or raw[1] != 0:
        raise FormatError(f"bad IDX magic {magic:#010x} at offset 0")
    dtype_code, ndim = raw[2], raw[3]
    if dtype_code != 0x08:
        raise FormatError(f"unsupported IDX dtype {dtype_code:#04x} at offset 2")
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise FormatError(f"truncated IDX dimension list (offset {len(raw)})")
    shape = tuple(
        int.from_bytes(raw[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim)
    )
    expected = int(np.prod(shape)) if shape else 0
    payload = raw[header_len:]
    if len(payload) != expected:
        raise FormatError(
            f"IDX payload length {len(payload)} != expected {expected} "
            f"(offset {header_len})"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(shape)


# ---------------------------------------------------------------------------
# PGM (P5) images


def write_pgm(path, image) -> None:
    """Write a 2-D uint8 array as a binary (P5) PGM with maxval 255."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise FormatError("PGM writer expects a 2-D array")
    if image.dtype != np.uint8:
        if image.min() < 0 or image.max() > 255:
            raise FormatError("PGM values must lie in [0, 255]")
        image = image.astype(np.uint8)
    with open(path, "wb") as handle:
        handle.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii"))
        handle.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise FormatError(f"not a binary PGM: {path}")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"unsupported PGM maxval {maxval}")
    data = np.frombuffer(raw[pos : pos + width * height], dtype=np.uint8)
    if data.size != width * height:
        raise FormatError(f"truncated PGM payload in {path}")
    return data.reshape(height, width)


# ---------------------------------------------------------------------------
# CSV


def write_csv(path, header, rows) -> None:
    """Plain comma-separated output, '.' decimal, repr-formatted floats.

    repr keeps the shortest round-trip representation, so identical runs
    produce byte-identical files.
    """
    with open(path, "w", encoding="ascii", newline="\n") as handle:
        handle.write(",".join(header) + "\n")
        for row in rows:
            handle.write(",".join(_format_cell(cell) for cell in row) + "\n")


def _format_cell(cell) -> str:
    if isinstance(cell, (bool, np.bool_)):
        return str(bool(cell))
    if isinstance(cell, (int, np.integer)):
        return str(int(cell))
    if isinstance(cell, (float, np.floating)):
        return repr(float(cell))
    return str(cell)


def read_csv(path):
    """Inverse of write_csv: returns (header, list of string rows)."""
    text = Path(path).read_text(encoding="ascii")
    lines = [line for line in text.split("\n") if line]
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]
