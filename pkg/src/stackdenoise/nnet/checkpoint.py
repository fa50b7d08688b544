"""Parameter checkpoints.

A checkpoint is an uncompressed zip holding one NPY member per parameter
tensor (``layer<id>.weight.npy`` / ``layer<id>.bias.npy``, float32) plus a
``header.json`` describing the graph it belongs to. Loading refuses files
whose architecture hash does not match the target graph, and truncated or
corrupt archives fail with a named error instead of garbage parameters.
"""

from __future__ import annotations

import json
import os
import zipfile

import numpy as np

from ..dataio.npyio import NpyFormatError, array_from_bytes, array_to_bytes
from .graph import ConvParams, NetworkGraph, graph_hash

FORMAT_NAME = "stackdenoise-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Raised for unreadable, truncated, or mismatched checkpoint files."""


def save_params(net: NetworkGraph, path: str | os.PathLike) -> None:
    """Write the graph's parameters (cast to float32) atomically."""
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "variant": net.variant,
        "n_in": net.n_in,
        "width_scale": net.width_scale,
        "graph_hash": graph_hash(net),
    }
    path = os.fspath(path)
    tmp = path + ".tmp"
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr("header.json", json.dumps(header, sort_keys=True, indent=1))
        for lid in sorted(net.params):
            p = net.params[lid]
            zf.writestr(
                f"layer{lid}.weight.npy",
                array_to_bytes(p.weight.astype(np.float32, copy=False)),
            )
            zf.writestr(
                f"layer{lid}.bias.npy",
                array_to_bytes(p.bias.astype(np.float32, copy=False)),
            )
    os.replace(tmp, path)


def read_header(path: str | os.PathLike) -> dict:
    """Return the checkpoint header without loading any parameters."""
    try:
        with zipfile.ZipFile(path) as zf:
            raw = zf.read("header.json")
    except (zipfile.BadZipFile, KeyError, OSError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    try:
        header = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise CheckpointError("not a parameter checkpoint (bad format field)")
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {header.get('version')!r}"
        )
    return header


def load_params(net: NetworkGraph, path: str | os.PathLike) -> None:
    """Load parameters into ``net`` in place.

    The stored graph hash must match ``net`` exactly (same variant, n_in,
    width_scale, and layer table); every tensor must be present with the
    expected shape.
    """
    header = read_header(path)
    want = graph_hash(net)
    if header.get("graph_hash") != want:
        raise CheckpointError(
            "architecture mismatch: checkpoint was saved for variant="
            f"{header.get('variant')!r} n_in={header.get('n_in')} "
            f"width_scale={header.get('width_scale')}, which does not hash to "
            f"this graph ({net.variant!r}, n_in={net.n_in}, "
            f"width_scale={net.width_scale})"
        )
    new: dict[int, ConvParams] = {}
    try:
        with zipfile.ZipFile(path) as zf:
            names = set(zf.namelist())
            for lid in sorted(net.params):
                wname = f"layer{lid}.weight.npy"
                bname = f"layer{lid}.bias.npy"
                if wname not in names or bname not in names:
                    raise CheckpointError(
                        f"checkpoint is missing tensors for layer {lid}"
                    )
                w = array_from_bytes(zf.read(wname))
                b = array_from_bytes(zf.read(bname))
                cur = net.params[lid]
                if w.shape != cur.weight.shape or b.shape != cur.bias.shape:
                    raise CheckpointError(
                        f"layer {lid}: stored shapes {w.shape}/{b.shape} do not "
                        f"match graph shapes {cur.weight.shape}/{cur.bias.shape}"
                    )
                new[lid] = ConvParams(
                    w.astype(net.dtype, copy=False), b.astype(net.dtype, copy=False)
                )
    except (zipfile.BadZipFile, NpyFormatError, OSError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    net.params = new
    net._cache = None
