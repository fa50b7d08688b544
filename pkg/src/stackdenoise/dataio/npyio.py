"""Bit-exact array file I/O.

Arrays are stored in the NPY version 1.0 layout: magic ``\\x93NUMPY``,
version bytes, a little-endian uint16 header length, an ASCII dictionary
header, then raw C-order data. Only little-endian float32/float64 payloads
in C order are accepted; everything else is rejected with a named error so
a malformed file can never be silently misread.
"""

from __future__ import annotations

import ast
import os
import struct

import numpy as np

MAGIC = b"\x93NUMPY"
VERSION = (1, 0)
_ALIGN = 64

_ALLOWED_DESCR = {"<f4": np.float32, "<f8": np.float64}


class NpyFormatError(ValueError):
    """Raised when a file does not parse as the supported NPY subset."""


def _header_bytes(arr: np.ndarray) -> bytes:
    descr = {np.dtype(np.float32): "<f4", np.dtype(np.float64): "<f8"}[arr.dtype]
    header = "{'descr': '%s', 'fortran_order': False, 'shape': %s, }" % (
        descr,
        repr(arr.shape),
    )
    preamble = len(MAGIC) + 2 + 2  # magic + version + header-length field
    total = preamble + len(header) + 1  # +1 for the trailing newline
    padded = ((total + _ALIGN - 1) // _ALIGN) * _ALIGN
    header = header + " " * (padded - total) + "\n"
    return header.encode("ascii")


def array_to_bytes(arr: np.ndarray) -> bytes:
    """Serialize a float array to NPY v1.0 bytes.

    Only float32/float64 arrays of 1 to 4 dimensions are supported.
    """
    arr = np.asarray(arr)
    if arr.dtype not in (np.float32, np.float64):
        raise NpyFormatError(f"unsupported dtype {arr.dtype}; expected float32 or float64")
    if not 1 <= arr.ndim <= 4:
        raise NpyFormatError(f"unsupported ndim {arr.ndim}; expected 1..4")
    header = _header_bytes(arr)
    return b"".join(
        (
            MAGIC,
            bytes(VERSION),
            struct.pack("<H", len(header)),
            header,
            np.ascontiguousarray(arr).tobytes(),
        )
    )


def write_array(path: str | os.PathLike, arr: np.ndarray) -> None:
    """Write a float array; round trips through :func:`read_array` bit-exactly.

    The file is written to a temporary sibling and renamed into place, so
    readers never observe a partial file.
    """
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(array_to_bytes(arr))
    os.replace(tmp, path)


def array_from_bytes(blob: bytes) -> np.ndarray:
    """Parse NPY v1.0 bytes produced by :func:`array_to_bytes` (or any plain
    v1.0 float file in C order)."""
    if len(blob) < 10 or blob[:6] != MAGIC:
        raise NpyFormatError("bad magic: not an NPY file")
    version = (blob[6], blob[7])
    if version != VERSION:
        raise NpyFormatError(f"unsupported NPY version {version}")
    (hlen,) = struct.unpack("<H", blob[8:10])
    if len(blob) < 10 + hlen:
        raise NpyFormatError("truncated header")
    try:
        header = ast.literal_eval(blob[10 : 10 + hlen].decode("ascii"))
    except (ValueError, SyntaxError, UnicodeDecodeError) as exc:
        raise NpyFormatError(f"header parse failure: {exc}") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise NpyFormatError(f"malformed header dictionary: {header!r}")
    descr = header["descr"]
    if descr not in _ALLOWED_DESCR:
        raise NpyFormatError(f"unsupported descr {descr!r}; expected '<f4' or '<f8'")
    if header["fortran_order"] is not False:
        raise NpyFormatError("fortran_order=True is not supported")
    shape = header["shape"]
    if not (
        isinstance(shape, tuple)
        and all(isinstance(d, int) and d >= 0 for d in shape)
    ):
        raise NpyFormatError(f"malformed shape {shape!r}")
    if not 1 <= len(shape) <= 4:
        raise NpyFormatError(
            f"unsupported dimensionality {len(shape)}; expected 1..4"
        )
    dtype = np.dtype(_ALLOWED_DESCR[descr])
    payload = blob[10 + hlen :]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(payload) != expected:
        raise NpyFormatError(
            f"payload length mismatch: expected {expected} bytes for shape "
            f"{shape}, found {len(payload)}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def read_array(path: str | os.PathLike) -> np.ndarray:
    """Read an array written by :func:`write_array`."""
    with open(path, "rb") as fh:
        return array_from_bytes(fh.read())
