"""Stack manifests and split assignment.

A manifest records where a stack's plane files live and which split the
stack belongs to. Splits are assigned at the stack level (never per plane),
so no subject leaks across train/val/test.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from ..stack import ImageStack
from . import npyio, tiffio

MODALITIES = ("mri", "fluor_low", "fluor_high", "brightfield")
SPLITS = ("train", "val", "test")


class ManifestError(ValueError):
    """Raised for malformed or inconsistent manifest data."""


@dataclass(frozen=True)
class StackManifest:
    id: str
    modality: str
    plane_files: tuple[str, ...]
    split: str
    height: int
    width: int

    def __post_init__(self) -> None:
        if not self.id:
            raise ManifestError("stack id must be non-empty")
        if self.modality not in MODALITIES:
            raise ManifestError(
                f"modality must be one of {MODALITIES}, got {self.modality!r}"
            )
        if self.split not in SPLITS:
            raise ManifestError(f"split must be one of {SPLITS}, got {self.split!r}")
        if not self.plane_files:
            raise ManifestError(f"stack {self.id!r} lists no plane files")
        if self.height < 1 or self.width < 1:
            raise ManifestError(f"stack {self.id!r} has invalid dimensions")
        object.__setattr__(self, "plane_files", tuple(self.plane_files))

    @property
    def n_planes(self) -> int:
        return len(self.plane_files)

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "modality": self.modality,
            "plane_files": list(self.plane_files),
            "split": self.split,
            "H": self.height,
            "W": self.width,
            "P": self.n_planes,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "StackManifest":
        required = {"id", "modality", "plane_files", "split", "H", "W", "P"}
        missing = required - set(d)
        if missing:
            raise ManifestError(f"manifest is missing fields {sorted(missing)}")
        m = cls(
            id=d["id"],
            modality=d["modality"],
            plane_files=tuple(d["plane_files"]),
            split=d["split"],
            height=int(d["H"]),
            width=int(d["W"]),
        )
        if int(d["P"]) != m.n_planes:
            raise ManifestError(
                f"stack {m.id!r}: P={d['P']} but {m.n_planes} plane files listed"
            )
        return m


def save_manifests(path: str | os.PathLike, manifests: list[StackManifest]) -> None:
    ids = [m.id for m in manifests]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ManifestError(f"duplicate stack ids: {dupes}")
    payload = {"stacks": [m.to_json_dict() for m in manifests]}
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def load_manifests(path: str | os.PathLike) -> list[StackManifest]:
    with open(path, "r", encoding="ascii") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"manifest file is not valid JSON: {exc}") from exc
    if isinstance(payload, dict) and "stacks" in payload:
        items = payload["stacks"]
    elif isinstance(payload, list):
        items = payload
    else:
        raise ManifestError("manifest file must hold a list or a {'stacks': [...]} object")
    out = [StackManifest.from_json_dict(d) for d in items]
    seen: set[str] = set()
    for m in out:
        if m.id in seen:
            raise ManifestError(f"duplicate stack id {m.id!r} in manifest")
        seen.add(m.id)
    return out


def _read_plane(path: str) -> np.ndarray:
    lower = path.lower()
    if lower.endswith(".npy"):
        return npyio.read_array(path)
    if lower.endswith((".tif", ".tiff")):
        return tiffio.read_tiff_gray(path)
    raise ManifestError(f"unsupported plane file extension: {path}")


def load_stack(manifest: StackManifest, base_dir: str | os.PathLike | None = None) -> ImageStack:
    """Load every referenced plane, enforcing consistent shape and dtype."""
    base = os.fspath(base_dir) if base_dir is not None else ""
    planes = []
    for rel in manifest.plane_files:
        full = os.path.join(base, rel) if base else rel
        if not os.path.exists(full):
            raise ManifestError(f"stack {manifest.id!r}: missing plane file {full}")
        planes.append(_read_plane(full))
    shapes = {p.shape for p in planes}
    if shapes != {(manifest.height, manifest.width)}:
        raise ManifestError(
            f"stack {manifest.id!r}: plane shapes {sorted(shapes)} do not all "
            f"match manifest {manifest.height}x{manifest.width}"
        )
    dtypes = {p.dtype for p in planes}
    if len(dtypes) != 1:
        raise ManifestError(
            f"stack {manifest.id!r}: planes mix dtypes {sorted(map(str, dtypes))}"
        )
    return ImageStack(np.stack(planes), id=manifest.id)


def save_stack(
    stack: ImageStack,
    out_dir: str | os.PathLike,
    modality: str,
    split: str = "train",
) -> StackManifest:
    """Write planes as NPY files named <id>_p<idx>.npy and return a manifest
    whose paths are relative to ``out_dir``."""
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    files = []
    for i in range(stack.n_planes):
        name = f"{stack.id}_p{i:04d}.npy"
        npyio.write_array(os.path.join(out_dir, name), stack.planes[i])
        files.append(name)
    h, w = stack.plane_shape
    return StackManifest(
        id=stack.id,
        modality=modality,
        plane_files=tuple(files),
        split=split,
        height=h,
        width=w,
    )


def _largest_remainder(n: int, weights: tuple[int, ...]) -> list[int]:
    total = sum(weights)
    raw = [n * w / total for w in weights]
    base = [int(x) for x in raw]
    for _ in range(n - sum(base)):
        fracs = [r - b for r, b in zip(raw, base)]
        j = int(np.argmax(fracs))
        base[j] += 1
        raw[j] = base[j]  # consume its remainder
    # every split must be non-empty: steal from the largest bucket
    for j, c in enumerate(base):
        if c == 0:
            k = int(np.argmax(base))
            base[k] -= 1
            base[j] += 1
    return base


def make_splits(
    manifests: list[StackManifest],
    kind: str,
    fields_per_well: int = 9,
) -> dict[str, list[StackManifest]]:
    """Assign stacks to train/val/test.

    kind="mri": whole subjects in 48/2/10 proportions (largest remainder,
    each split non-empty), assigned in list order.
    kind="microscopy": stacks are acquisition fields grouped into wells of
    ``fields_per_well`` consecutive entries; the last well is held out and
    divided into validation (one third of the well) and test (the rest), so
    no well spans a split boundary.
    """
    ids = [m.id for m in manifests]
    if len(set(ids)) != len(ids):
        raise ManifestError("duplicate stack ids in split input")
    n = len(manifests)
    if kind == "mri":
        if n < 3:
            raise ManifestError(f"need at least 3 stacks to split, got {n}")
        tr, va, te = _largest_remainder(n, (48, 2, 10))
        parts = {
            "train": manifests[:tr],
            "val": manifests[tr : tr + va],
            "test": manifests[tr + va :],
        }
    elif kind == "microscopy":
        if fields_per_well < 2:
            raise ManifestError(f"fields_per_well must be >= 2, got {fields_per_well}")
        if n % fields_per_well != 0:
            raise ManifestError(
                f"{n} stacks do not divide into wells of {fields_per_well}"
            )
        wells = n // fields_per_well
        if wells < 2:
            raise ManifestError("need at least two wells to hold one out")
        holdout = manifests[(wells - 1) * fields_per_well :]
        va = max(1, fields_per_well // 3)
        parts = {
            "train": manifests[: (wells - 1) * fields_per_well],
            "val": holdout[:va],
            "test": holdout[va:],
        }
    else:
        raise ManifestError(f"unknown split kind {kind!r}")

    out = {
        split: [replace(m, split=split) for m in ms] for split, ms in parts.items()
    }
    assigned = [m.id for ms in out.values() for m in ms]
    if sorted(assigned) != sorted(ids):
        raise ManifestError("split assignment lost or duplicated a stack")
    return out
