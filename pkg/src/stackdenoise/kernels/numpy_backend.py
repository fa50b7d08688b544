"""NumPy implementation of the 3x3 convolution kernels.

Same-padding 3x3 convolution is the hot spot of training; this backend
expresses it as an im2col gather followed by one BLAS matmul per call.
It is the fallback used when the compiled extension is unavailable, and
the reference the compiled backend is checked against.

Layouts: activations are (N, C, H, W); weights are (C_out, C_in, 3, 3);
biases are (C_out,). All functions accept float32 or float64 and keep the
input dtype.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "numpy"


def _im2col(x: np.ndarray) -> np.ndarray:
    """(N, C, H, W) -> (N*H*W, C*9) patch matrix with zero padding of 1."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    # windows: (N, C, H, W, 3, 3)
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h * w, c * 9)


def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, c, h, wd = x.shape
    co = w.shape[0]
    cols = _im2col(x)
    y = cols @ w.reshape(co, c * 9).T
    y += b
    return y.reshape(n, h, wd, co).transpose(0, 3, 1, 2).copy()


def conv3x3_backward_input(gy: np.ndarray, w: np.ndarray) -> np.ndarray:
    # dL/dx is the correlation of gy with the spatially flipped, channel-
    # transposed weights.
    n, co, h, wd = gy.shape
    ci = w.shape[1]
    wf = np.ascontiguousarray(w[:, :, ::-1, ::-1])
    cols = _im2col(gy)
    gx = cols @ wf.transpose(1, 0, 2, 3).reshape(ci, co * 9).T
    return gx.reshape(n, h, wd, ci).transpose(0, 3, 1, 2).copy()


def conv3x3_backward_params(x: np.ndarray, gy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, c, h, wd = x.shape
    co = gy.shape[1]
    cols = _im2col(x)
    gy_mat = gy.transpose(0, 2, 3, 1).reshape(n * h * wd, co)
    gw = (gy_mat.T @ cols).reshape(co, c, 3, 3)
    gb = gy.sum(axis=(0, 2, 3))
    return gw, gb
