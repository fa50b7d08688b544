"""Frequency-domain noise synthesis and spectral post-processing.

Synthetic acquisition noise is produced by Bernoulli-undersampling the 2D
spectrum of a clean image: each frequency bin k survives with probability
exp(-lambda*|k|), surviving bins are inverse-probability weighted so the
noisy spectrum stays unbiased, and dropped bins become zeros. The decay
rate lambda is calibrated so the expected retained fraction hits a target
(10% by default).

All spectra here are centered: the DC bin sits at (H//2, W//2), which is
the natural frame for |k| and for mask bookkeeping. The forward transform
is unnormalized; the inverse carries the 1/(H*W) factor.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class ShapeMismatchError(ValueError):
    """Operands do not share a common 2D shape."""


def dft2(image: np.ndarray) -> np.ndarray:
    """Unnormalized 2D DFT with the DC bin shifted to the grid center."""
    image = np.asarray(image)
    if image.ndim != 2 or image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError(f"expected a 2D image, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ValueError("non-finite values in input image")
    return np.fft.fftshift(np.fft.fft2(image))


def idft2(spectrum: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dft2`; carries the 1/(H*W) normalization."""
    spectrum = np.asarray(spectrum)
    if spectrum.ndim != 2:
        raise ValueError(f"expected a 2D spectrum, got shape {spectrum.shape}")
    return np.fft.ifft2(np.fft.ifftshift(spectrum))


def freq_radius(h: int, w: int) -> np.ndarray:
    """Euclidean distance of every (centered) frequency bin from DC, in bins."""
    fy = np.arange(h) - h // 2
    fx = np.arange(w) - w // 2
    return np.hypot(fy[:, None], fx[None, :])


@lru_cache(maxsize=64)
def calibrate_lambda(h: int, w: int, retain_fraction: float) -> float:
    """Solve mean_k exp(-lambda*|k|) = retain_fraction by bisection.

    The mean runs over the full h-by-w frequency grid; the result is exact
    to 1e-6 in the retained fraction. retain_fraction=1 maps to lambda=0.
    """
    if not 0.0 < retain_fraction <= 1.0:
        raise ValueError(f"retain_fraction must be in (0, 1], got {retain_fraction}")
    if retain_fraction == 1.0:
        return 0.0
    r = freq_radius(h, w)

    def mean_p(lam: float) -> float:
        return float(np.mean(np.exp(-lam * r)))

    lo, hi = 0.0, 1.0
    while mean_p(hi) > retain_fraction:
        hi *= 2.0
        if hi > 1e6:
            raise RuntimeError("lambda calibration failed to bracket the target")
    while True:
        mid = 0.5 * (lo + hi)
        p = mean_p(mid)
        if abs(p - retain_fraction) < 1e-6:
            return mid
        if p > retain_fraction:
            lo = mid
        else:
            hi = mid


@dataclass(frozen=True)
class NoiseSpec:
    """Configuration for one family of undersampling-noise realizations.

    ``lam`` is normally left as None and calibrated per grid size from
    ``retain_fraction``; an explicit non-negative value overrides that.
    """

    retain_fraction: float = 0.10
    lam: float | None = None
    seed: int = 0
    symmetric_mask: bool = True

    def __post_init__(self):
        if not 0.0 < self.retain_fraction <= 1.0:
            raise ValueError(
                f"retain_fraction must be in (0, 1], got {self.retain_fraction}"
            )
        if self.lam is not None and self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")

    def lambda_for(self, h: int, w: int) -> float:
        if self.lam is not None:
            return self.lam
        return calibrate_lambda(h, w, self.retain_fraction)


@dataclass
class NoiseRealization:
    """One drawn corruption of one image.

    ``raw_spectrum`` holds the measured (unweighted) spectrum values, zero
    wherever ``mask`` is False; ``noisy_image`` is the inverse transform of
    the inverse-probability-weighted spectrum. Both spectral arrays use the
    centered convention of :func:`dft2`.
    """

    noisy_image: np.ndarray
    mask: np.ndarray
    raw_spectrum: np.ndarray
    lambda_used: float


def _hermitian_canonical_flat(h: int, w: int) -> np.ndarray:
    """For each bin (in centered layout), the flat index of the canonical
    member of its conjugate-symmetric pair."""
    iy, ix = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    # Work in unshifted coordinates, where the partner of (i, j) is (-i, -j) mod (h, w).
    uy, ux = (iy - h // 2) % h, (ix - w // 2) % w
    py, px = (-uy) % h, (-ux) % w
    # Map partners back into the centered layout.
    cy, cx = (py + h // 2) % h, (px + w // 2) % w
    flat = iy * w + ix
    partner = cy * w + cx
    return np.minimum(flat, partner)


def corrupt(clean: np.ndarray, spec: NoiseSpec) -> NoiseRealization:
    """Draw one undersampling-noise realization of a clean image.

    The mask is Bernoulli per frequency with p(k)=exp(-lambda*|k|); with
    ``symmetric_mask`` the draw is shared between conjugate bin pairs so the
    weighted spectrum stays Hermitian and the noisy image real.
    """
    clean = np.asarray(clean, dtype=np.float64)
    if clean.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {clean.shape}")
    if not np.all(np.isfinite(clean)):
        raise ValueError("non-finite values in input image")
    h, w = clean.shape
    lam = spec.lambda_for(h, w)
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")

    prob = np.exp(-lam * freq_radius(h, w))
    rng = np.random.default_rng(spec.seed)
    draws = rng.random(h * w)
    if spec.symmetric_mask:
        draws = draws[_hermitian_canonical_flat(h, w).ravel()]
    mask = (draws < prob.ravel()).reshape(h, w)

    spectrum = dft2(clean)
    raw = np.where(mask, spectrum, 0.0)
    weighted = np.where(mask, spectrum / prob, 0.0)
    noisy_c = idft2(weighted)
    if spec.symmetric_mask:
        rel_imag = np.abs(noisy_c.imag).max() / max(np.abs(noisy_c).max(), 1e-300)
        if rel_imag >= 1e-9:
            raise RuntimeError(
                f"symmetric mask produced a non-real image (relative imaginary "
                f"magnitude {rel_imag:.3e})"
            )
    return NoiseRealization(
        noisy_image=noisy_c.real.copy(),
        mask=mask,
        raw_spectrum=raw,
        lambda_used=lam,
    )


def data_consistency(output: np.ndarray, realization: NoiseRealization) -> np.ndarray:
    """Overwrite the output's spectrum with the measured values at every
    sampled frequency, then return to image space."""
    output = np.asarray(output, dtype=np.float64)
    if output.shape != realization.mask.shape:
        raise ShapeMismatchError(
            f"output shape {output.shape} != realization shape {realization.mask.shape}"
        )
    combined = np.where(realization.mask, realization.raw_spectrum, dft2(output))
    return idft2(combined).real.copy()


def combine_copies(a: NoiseRealization, b: NoiseRealization) -> np.ndarray:
    """Merge the measured spectra of two independent realizations.

    Bins sampled in one copy keep that copy's value; bins sampled in both
    take the mean; bins sampled in neither stay zero.
    """
    if a.mask.shape != b.mask.shape:
        raise ShapeMismatchError(
            f"realization shapes differ: {a.mask.shape} vs {b.mask.shape}"
        )
    count = a.mask.astype(np.int64) + b.mask.astype(np.int64)
    total = a.raw_spectrum + b.raw_spectrum
    merged = np.where(count > 0, total / np.maximum(count, 1), 0.0)
    return idft2(merged).real.copy()
