"""Minimal baseline TIFF for single-plane grayscale images.

Reads uncompressed 8- or 16-bit single-sample images in either byte order,
strip-organized only. Anything outside that envelope (compression, tiles,
palette or RGB photometrics, multiple samples) fails with an error naming
the offending tag, so unsupported files are rejected rather than misread.
Writing always produces little-endian single-strip files.
"""

from __future__ import annotations

import os
import struct

import numpy as np


class TiffFormatError(ValueError):
    """Raised when a file is not in the supported baseline TIFF subset."""


# tag ids
_WIDTH = 256
_HEIGHT = 257
_BITS = 258
_COMPRESSION = 259
_PHOTOMETRIC = 262
_STRIP_OFFSETS = 273
_SAMPLES_PER_PIXEL = 277
_ROWS_PER_STRIP = 278
_STRIP_BYTE_COUNTS = 279
_PLANAR = 284
_TILE_TAGS = (322, 323, 324, 325)

_TYPE_SIZES = {1: 1, 3: 2, 4: 4}  # BYTE, SHORT, LONG
_TYPE_CODES = {1: "B", 3: "H", 4: "I"}


def _read_entry_values(blob: bytes, bo: str, ftype: int, count: int, raw4: bytes, tag: int):
    if ftype not in _TYPE_SIZES:
        raise TiffFormatError(f"tag {tag}: unsupported field type {ftype}")
    size = _TYPE_SIZES[ftype] * count
    if size <= 4:
        buf = raw4[:size]
    else:
        (off,) = struct.unpack(bo + "I", raw4)
        if off + size > len(blob):
            raise TiffFormatError(f"tag {tag}: value block extends past end of file")
        buf = blob[off : off + size]
    return list(struct.unpack(bo + _TYPE_CODES[ftype] * count, buf))


def read_tiff_gray(path: str | os.PathLike) -> np.ndarray:
    """Read a grayscale image; returns float64 in the native integer range."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise TiffFormatError("file too short for a TIFF header")
    order = blob[:2]
    if order == b"II":
        bo = "<"
    elif order == b"MM":
        bo = ">"
    else:
        raise TiffFormatError(f"bad byte-order mark {order!r}")
    (magic,) = struct.unpack(bo + "H", blob[2:4])
    if magic != 42:
        raise TiffFormatError(f"bad TIFF magic number {magic}")
    (ifd_off,) = struct.unpack(bo + "I", blob[4:8])
    if ifd_off + 2 > len(blob):
        raise TiffFormatError("IFD offset points past end of file")
    (n_entries,) = struct.unpack(bo + "H", blob[ifd_off : ifd_off + 2])
    tags: dict[int, list[int]] = {}
    for k in range(n_entries):
        base = ifd_off + 2 + 12 * k
        if base + 12 > len(blob):
            raise TiffFormatError("IFD entry extends past end of file")
        tag, ftype = struct.unpack(bo + "HH", blob[base : base + 4])
        (count,) = struct.unpack(bo + "I", blob[base + 4 : base + 8])
        tags[tag] = _read_entry_values(
            blob, bo, ftype, count, blob[base + 8 : base + 12], tag
        )

    for t in _TILE_TAGS:
        if t in tags:
            raise TiffFormatError(f"tiled organization is unsupported (tag {t})")
    for t in (_WIDTH, _HEIGHT, _STRIP_OFFSETS, _STRIP_BYTE_COUNTS):
        if t not in tags:
            raise TiffFormatError(f"missing required tag {t}")

    width = tags[_WIDTH][0]
    height = tags[_HEIGHT][0]
    comp = tags.get(_COMPRESSION, [1])[0]
    if comp != 1:
        raise TiffFormatError(f"compressed data is unsupported (tag {_COMPRESSION}, value {comp})")
    photo = tags.get(_PHOTOMETRIC, [1])[0]
    if photo not in (0, 1):
        raise TiffFormatError(
            f"only grayscale photometric 0/1 is supported (tag {_PHOTOMETRIC}, value {photo})"
        )
    spp = tags.get(_SAMPLES_PER_PIXEL, [1])[0]
    if spp != 1:
        raise TiffFormatError(
            f"only one sample per pixel is supported (tag {_SAMPLES_PER_PIXEL}, value {spp})"
        )
    planar = tags.get(_PLANAR, [1])[0]
    if planar != 1:
        raise TiffFormatError(f"planar configuration {planar} is unsupported (tag {_PLANAR})")
    bits_list = tags.get(_BITS, [1])
    if len(bits_list) != 1 or bits_list[0] not in (8, 16):
        raise TiffFormatError(
            f"only 8- or 16-bit single-sample data is supported (tag {_BITS}, value {bits_list})"
        )
    bits = bits_list[0]

    offsets = tags[_STRIP_OFFSETS]
    counts = tags[_STRIP_BYTE_COUNTS]
    if len(offsets) != len(counts):
        raise TiffFormatError(
            f"strip offset/count length mismatch (tags {_STRIP_OFFSETS}/{_STRIP_BYTE_COUNTS})"
        )
    parts = []
    for off, cnt in zip(offsets, counts):
        if off + cnt > len(blob):
            raise TiffFormatError(f"strip extends past end of file (tag {_STRIP_OFFSETS})")
        parts.append(blob[off : off + cnt])
    data = b"".join(parts)
    expected = width * height * (bits // 8)
    if len(data) != expected:
        raise TiffFormatError(
            f"pixel data length {len(data)} != expected {expected} for "
            f"{width}x{height}x{bits}bit"
        )
    dtype = np.dtype(f"{bo}u{bits // 8}")
    return np.frombuffer(data, dtype=dtype).reshape(height, width).astype(np.float64)


def write_tiff_gray(path: str | os.PathLike, arr: np.ndarray, bits: int = 16) -> None:
    """Write an integer-valued grayscale image as a little-endian baseline
    TIFF (single strip, uncompressed)."""
    if bits not in (8, 16):
        raise TiffFormatError(f"bits must be 8 or 16, got {bits}")
    a = np.asarray(arr)
    if a.ndim != 2:
        raise TiffFormatError(f"expected a 2D image, got shape {a.shape}")
    lo, hi = 0, (1 << bits) - 1
    if np.issubdtype(a.dtype, np.floating):
        if np.any(a < lo) or np.any(a > hi) or not np.all(a == np.round(a)):
            raise TiffFormatError(
                f"float image must hold integers within 0..{hi} to be stored as {bits}-bit"
            )
    elif np.any(a < lo) or np.any(a > hi):
        raise TiffFormatError(f"values outside 0..{hi} cannot be stored as {bits}-bit")
    h, w = a.shape
    data = a.astype(f"<u{bits // 8}").tobytes()

    entries = [
        (_WIDTH, 4, 1, w),
        (_HEIGHT, 4, 1, h),
        (_BITS, 3, 1, bits),
        (_COMPRESSION, 3, 1, 1),
        (_PHOTOMETRIC, 3, 1, 1),  # BlackIsZero
        (_STRIP_OFFSETS, 4, 1, 0),  # patched below
        (_SAMPLES_PER_PIXEL, 3, 1, 1),
        (_ROWS_PER_STRIP, 4, 1, h),
        (_STRIP_BYTE_COUNTS, 4, 1, len(data)),
        (_PLANAR, 3, 1, 1),
    ]
    ifd_off = 8
    data_off = ifd_off + 2 + 12 * len(entries) + 4
    entries = [
        (tag, t, c, data_off if tag == _STRIP_OFFSETS else v)
        for tag, t, c, v in entries
    ]
    out = bytearray()
    out += b"II" + struct.pack("<H", 42) + struct.pack("<I", ifd_off)
    out += struct.pack("<H", len(entries))
    for tag, ftype, count, value in entries:
        raw4 = struct.pack("<" + _TYPE_CODES[ftype], value)
        raw4 += b"\x00" * (4 - len(raw4))
        out += struct.pack("<HHI", tag, ftype, count) + raw4
    out += struct.pack("<I", 0)  # no next IFD
    out += data
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(bytes(out))
    os.replace(tmp, path)
