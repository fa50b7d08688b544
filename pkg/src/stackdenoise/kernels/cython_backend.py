"""Wrappers around the compiled convolution kernels.

Importing this module raises ImportError when the extension was not built;
callers go through :mod:`stackdenoise.kernels`, which falls back to the
NumPy backend in that case.

The STACKDENOISE_THREADS environment variable caps the OpenMP worker count
(0 or unset = one worker per CPU). Results are bit-identical for any
thread count because each worker owns a disjoint output slice.
"""

from __future__ import annotations

import os

import numpy as np

from . import _conv_cy

NAME = "cython"


def _threads() -> int:
    raw = os.environ.get("STACKDENOISE_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n


def _check_dtype(*arrays: np.ndarray) -> None:
    dt = arrays[0].dtype
    if dt not in (np.float32, np.float64):
        raise TypeError(f"kernels require float32/float64 arrays, got {dt}")
    for a in arrays[1:]:
        if a.dtype != dt:
            raise TypeError(f"mixed dtypes {dt} and {a.dtype} in kernel call")


def _pad1(x: np.ndarray) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))


def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_dtype(x, w, b)
    n, _, h, wd = x.shape
    y = np.empty((n, w.shape[0], h, wd), dtype=x.dtype)
    _conv_cy.conv_fwd(_pad1(x), np.ascontiguousarray(w), np.ascontiguousarray(b), y, _threads())
    return y


def conv3x3_backward_input(gy: np.ndarray, w: np.ndarray) -> np.ndarray:
    _check_dtype(gy, w)
    n, _, h, wd = gy.shape
    ci = w.shape[1]
    # Correlating gy with the flipped, channel-transposed weights is the same
    # computation as the forward pass with in/out channels swapped.
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    gx = np.empty((n, ci, h, wd), dtype=gy.dtype)
    _conv_cy.conv_fwd(_pad1(gy), wt, np.zeros(ci, dtype=gy.dtype), gx, _threads())
    return gx


def conv3x3_backward_params(x: np.ndarray, gy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    _check_dtype(x, gy)
    co, ci = gy.shape[1], x.shape[1]
    gw = np.zeros((co, ci, 3, 3), dtype=x.dtype)
    gb = np.zeros(co, dtype=x.dtype)
    _conv_cy.conv_bwd_params(_pad1(x), np.ascontiguousarray(gy), gw, gb, _threads())
    return gw, gb
