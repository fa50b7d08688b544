"""Modality preprocessing applied before sampling and training."""

from __future__ import annotations

import numpy as np

from ..stack import ImageStack

# 150-plane volumes keep only this central window (edge planes are mostly
# background and distort per-plane scaling)
_TRIM_FROM = 150
_TRIM_SLICE = slice(25, 125)


class DegenerateImageError(ValueError):
    """Raised when an image has no usable intensity range."""


def scale_plane_unit_interval(plane: np.ndarray, plane_label: str = "") -> np.ndarray:
    """Min-max scale one plane to [-0.5, 0.5]."""
    lo = float(plane.min())
    hi = float(plane.max())
    if hi <= lo:
        raise DegenerateImageError(
            f"plane {plane_label or '?'} is constant ({lo}); cannot scale"
        )
    return ((plane - lo) / (hi - lo) - 0.5).astype(np.float64)


def preprocess_mri(stack: ImageStack) -> ImageStack:
    """Trim a 150-plane volume to its central 100 planes, then scale each
    plane independently to [-0.5, 0.5]."""
    planes = stack.planes
    if planes.shape[0] == _TRIM_FROM:
        planes = planes[_TRIM_SLICE]
    scaled = np.stack(
        [
            scale_plane_unit_interval(p, f"{stack.id}[{i}]")
            for i, p in enumerate(planes)
        ]
    )
    return ImageStack(scaled, id=stack.id, plane_spacing=stack.plane_spacing)


def preprocess_microscopy(
    stacks: list[ImageStack],
) -> tuple[list[ImageStack], np.ndarray]:
    """Subtract the shared median background (median over every plane of
    every stack), then percentile-scale each plane by its own 3rd and 99.8th
    percentiles. Returns the processed stacks and the background image."""
    if not stacks:
        raise ValueError("no stacks to preprocess")
    shapes = {s.plane_shape for s in stacks}
    if len(shapes) != 1:
        raise ValueError(f"stacks disagree on plane shape: {sorted(shapes)}")
    all_planes = np.concatenate([s.planes for s in stacks], axis=0)
    background = np.median(all_planes, axis=0)
    out = []
    for s in stacks:
        planes = []
        for i, p in enumerate(s.planes):
            q = p - background
            lo, hi = np.percentile(q, [3.0, 99.8])
            if hi <= lo:
                raise DegenerateImageError(
                    f"plane {s.id}[{i}] has no spread between the 3rd and "
                    "99.8th percentiles after background subtraction"
                )
            planes.append((q - lo) / (hi - lo))
        out.append(
            ImageStack(np.stack(planes), id=s.id, plane_spacing=s.plane_spacing)
        )
    return out, background
