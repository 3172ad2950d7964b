"""File formats: CSI1 tensors, CSV tables and the dataset container.

CSI1 layout (all little-endian)::

    offset 0   4 bytes   ASCII magic b"CSI1"
    offset 4   4 x u32   T, S, A, L
    offset 20  T*S*A*L x (f32 re, f32 im), row-major [T][S][A][L]

Samples are stored as float32, so a round trip is bit-exact for complex64
tensors; complex128 input is rounded on write.

Dataset container (``dataset-prep``)::

    b"CSD1", u32 N, T_MAX, RX, F, N_CLASS, N_DOMAIN,
    f32 features [N][T_MAX][RX][F], f32 labels [N][N_CLASS],
    f32 domains [N][N_DOMAIN]
"""
from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .core import as_tensor
from .errors import FormatError

CSI1_MAGIC = b"CSI1"
DATASET_MAGIC = b"CSD1"
_HEADER = struct.Struct("<4s4I")
_DS_HEADER = struct.Struct("<4s6I")
_SAMPLE = np.dtype("<c8")
_MAX_ELEMENTS = 2**31


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_csi1(tensor) -> bytes:
    arr = as_tensor(tensor)
    T, S, A, L = arr.shape
    return _HEADER.pack(CSI1_MAGIC, T, S, A, L) + arr.astype(_SAMPLE).tobytes(order="C")


def decode_csi1(buf: bytes) -> np.ndarray:
    if len(buf) < 4 or buf[:4] != CSI1_MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:4])!r}, expected {CSI1_MAGIC!r}", 0)
    if len(buf) < _HEADER.size:
        raise FormatError(f"truncated header: {len(buf)} bytes, need {_HEADER.size}", len(buf))
    _, T, S, A, L = _HEADER.unpack_from(buf)
    for i, n in enumerate((T, S, A, L)):
        if n < 1:
            raise FormatError(f"dimension {'TSAL'[i]} is zero", 4 + 4 * i)
    count = T * S * A * L
    if count > _MAX_ELEMENTS:
        raise FormatError(f"declared element count {count} exceeds limit {_MAX_ELEMENTS}", 4)
    expected = count * _SAMPLE.itemsize
    actual = len(buf) - _HEADER.size
    if actual < expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, found {actual}",
            _HEADER.size + actual)
    if actual > expected:
        raise FormatError(
            f"trailing data: expected {expected} payload bytes, found {actual}",
            _HEADER.size + expected)
    data = np.frombuffer(buf, dtype=_SAMPLE, count=count, offset=_HEADER.size)
    data = data.astype(np.complex64).reshape(T, S, A, L)
    bad = np.flatnonzero(~np.isfinite(data.ravel()))
    if bad.size:
        raise FormatError(f"non-finite sample at flat index {int(bad[0])}",
                          _HEADER.size + int(bad[0]) * _SAMPLE.itemsize)
    return data


def write_csi1(path, tensor) -> None:
    atomic_write_bytes(path, encode_csi1(tensor))


def read_csi1(path) -> np.ndarray:
    """Read a CSI1 file into a complex64 array of shape (T, S, A, L)."""
    return decode_csi1(Path(path).read_bytes())


# ---------------------------------------------------------------- CSV

def _fmt(x) -> str:
    return format(float(x), ".9g")


def format_csv(rows, header=None) -> str:
    lines = []
    if header is not None:
        lines.append(",".join(str(h) for h in header))
    for row in rows:
        lines.append(",".join(_fmt(v) if not isinstance(v, str) else v for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path, rows, header=None) -> None:
    atomic_write_bytes(path, format_csv(rows, header).encode())


def write_matrix_csv(path, matrix, row_axis=None, col_axis=None) -> None:
    """Real matrix as CSV. With axes given, the first line holds ``col_axis``
    (prefixed by an empty cell) and each row starts with its ``row_axis`` value.
    """
    matrix = np.asarray(matrix, dtype=float)
    rows = []
    if col_axis is not None:
        head = ([""] if row_axis is not None else []) + [_fmt(v) for v in col_axis]
        rows.append(",".join(head))
    for i, r in enumerate(matrix):
        cells = [_fmt(v) for v in r]
        if row_axis is not None:
            cells.insert(0, _fmt(row_axis[i]))
        rows.append(",".join(cells))
    atomic_write_bytes(path, ("\n".join(rows) + "\n").encode())


def read_matrix_csv(path, with_axes=True):
    """Inverse of :func:`write_matrix_csv`; returns ``(matrix, row_axis, col_axis)``."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty CSV", 0)
    try:
        if with_axes:
            col_axis = np.array([float(v) for v in lines[0].split(",")[1:]])
            body = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
            body = np.array(body, dtype=float)
            return body[:, 1:], body[:, 0], col_axis
        body = np.array([[float(v) for v in ln.split(",")] for ln in lines], dtype=float)
        return body, None, None
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}", 0) from None


# ---------------------------------------------------------------- dataset

def encode_dataset(features, labels, domains) -> bytes:
    features = np.asarray(features, dtype="<f4")
    labels = np.asarray(labels, dtype="<f4")
    domains = np.asarray(domains, dtype="<f4")
    if features.ndim == 5:
        features = features[..., 0]
    N, T, R, F = features.shape
    head = _DS_HEADER.pack(DATASET_MAGIC, N, T, R, F, labels.shape[1], domains.shape[1])
    return head + features.tobytes() + labels.tobytes() + domains.tobytes()


def decode_dataset(buf: bytes):
    """Return ``(features [N,T,RX,F,1], labels, domains)``."""
    if buf[:4] != DATASET_MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:4])!r}, expected {DATASET_MAGIC!r}", 0)
    if len(buf) < _DS_HEADER.size:
        raise FormatError("truncated dataset header", len(buf))
    _, N, T, R, F, C, D = _DS_HEADER.unpack_from(buf)
    sizes = [N * T * R * F, N * C, N * D]
    expected = 4 * sum(sizes)
    actual = len(buf) - _DS_HEADER.size
    if actual != expected:
        raise FormatError(f"payload size mismatch: expected {expected} bytes, found {actual}",
                          _DS_HEADER.size + min(actual, expected))
    off = _DS_HEADER.size
    out = []
    for n, shape in zip(sizes, [(N, T, R, F, 1), (N, C), (N, D)]):
        out.append(np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(shape).copy())
        off += 4 * n
    return tuple(out)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
