"""Synthetic drifting phantoms.

Each stack is a smooth random field evolving as an AR(1) process along the
plane axis plus a handful of slowly drifting Gaussian blobs, min-max scaled
per plane to [-0.5, 0.5]. With the default drift the adjacent-plane SSIM
lands in the high-correlation regime the neighbor-supervision method assumes
(mean near 0.86), while distant planes decorrelate; drift_rate=0 produces
identical planes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..stack import ImageStack


@dataclass(frozen=True)
class PhantomSpec:
    n_planes: int = 16
    height: int = 64
    width: int = 64
    blur_sigma: float = 6.0
    drift_rate: float = 0.02
    n_blobs: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_planes < 1:
            raise ValueError(f"n_planes must be >= 1, got {self.n_planes}")
        if self.height < 8 or self.width < 8:
            raise ValueError("phantom planes must be at least 8x8")
        if not 0.0 <= self.drift_rate <= 1.0:
            raise ValueError(f"drift_rate must lie in [0, 1], got {self.drift_rate}")
        if self.blur_sigma <= 0:
            raise ValueError(f"blur_sigma must be positive, got {self.blur_sigma}")
        if self.n_blobs < 0:
            raise ValueError(f"n_blobs must be >= 0, got {self.n_blobs}")


def _smooth_field(rng: np.random.Generator, h: int, w: int, sigma: float) -> np.ndarray:
    f = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma, mode="wrap")
    sd = f.std()
    return f / sd if sd > 0 else f


def generate_phantom_stack(spec: PhantomSpec, stack_id: str = "phantom") -> ImageStack:
    """Deterministic for a given spec (seed included)."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    rho = 1.0 - spec.drift_rate
    fresh_scale = float(np.sqrt(max(0.0, 1.0 - rho * rho)))

    field = _smooth_field(rng, h, w, spec.blur_sigma)
    centers = rng.uniform([0, 0], [h, w], size=(spec.n_blobs, 2))
    velocities = rng.uniform(-1.5, 1.5, size=(spec.n_blobs, 2)) * spec.drift_rate * 10
    amps = rng.uniform(1.5, 3.0, size=spec.n_blobs)
    widths = rng.uniform(h / 16, h / 8, size=spec.n_blobs)

    yy, xx = np.mgrid[0:h, 0:w]
    planes = []
    for i in range(spec.n_planes):
        if i > 0:
            field = rho * field + fresh_scale * _smooth_field(rng, h, w, spec.blur_sigma)
        img = field.copy()
        for b in range(spec.n_blobs):
            cy = centers[b, 0] + velocities[b, 0] * i
            cx = centers[b, 1] + velocities[b, 1] * i
            d2 = (yy - cy) ** 2 + (xx - cx) ** 2
            img += amps[b] * np.exp(-d2 / (2.0 * widths[b] ** 2))
        planes.append(img)
    vol = np.stack(planes)
    # one scale for the whole stack keeps inter-plane luminance consistent
    lo, hi = vol.min(), vol.max()
    return ImageStack((vol - lo) / (hi - lo) - 0.5, id=stack_id)


def with_plane_noise(stack: ImageStack, sigma: float, seed: int) -> ImageStack:
    """An independent additive white Gaussian noise copy of a stack."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    rng = np.random.default_rng(seed)
    noisy = stack.planes + rng.normal(0.0, sigma, size=stack.planes.shape)
    return ImageStack(noisy, id=stack.id, plane_spacing=stack.plane_spacing)
