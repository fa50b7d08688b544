"""Forward and reverse-mode primitives for the fixed operator set.

Activations, pooling, upsampling and channel plumbing are NumPy throughout
(they are memory-bound reshapes); the 3x3 convolutions dispatch to the
selected kernel backend. Activations are (N, C, H, W).
"""

from __future__ import annotations

import numpy as np

from ..kernels import (  # noqa: F401  (re-exported for the graph executor)
    conv3x3_backward_input,
    conv3x3_backward_params,
    conv3x3_forward,
)


def relu_forward(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0)


def relu_backward(ga: np.ndarray, z: np.ndarray) -> np.ndarray:
    return ga * (z > 0)


def leaky_relu_forward(z: np.ndarray, alpha: float) -> np.ndarray:
    return np.where(z > 0, z, alpha * z)


def leaky_relu_backward(ga: np.ndarray, z: np.ndarray, alpha: float) -> np.ndarray:
    return ga * np.where(z > 0, 1.0, alpha).astype(z.dtype)


def maxpool2x2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Returns the pooled map and a uint8 argmax code (0..3, row-major within
    each 2x2 window; ties resolve to the first position, deterministically)."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2x2 requires even spatial dims, got {h}x{w}")
    v = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    v = np.ascontiguousarray(v).reshape(n, c, h // 2, w // 2, 4)
    idx = v.argmax(axis=-1)
    y = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]
    return y, idx.astype(np.uint8)


def maxpool2x2_backward(gy: np.ndarray, idx: np.ndarray) -> np.ndarray:
    n, c, h2, w2 = gy.shape
    g4 = np.zeros((n, c, h2, w2, 4), dtype=gy.dtype)
    np.put_along_axis(g4, idx[..., None].astype(np.int64), gy[..., None], axis=-1)
    gx = g4.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(gx).reshape(n, c, h2 * 2, w2 * 2)


def upsample2x2_forward(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbor 2x upsampling."""
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample2x2_backward(gy: np.ndarray) -> np.ndarray:
    n, c, h, w = gy.shape
    return gy.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def concat_forward(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.concatenate([a, b], axis=1)


def concat_backward(g: np.ndarray, c_first: int) -> tuple[np.ndarray, np.ndarray]:
    return g[:, :c_first].copy(), g[:, c_first:].copy()


def center_source(x: np.ndarray) -> np.ndarray:
    """The residual source: the middle input channel, or the mean of the two
    central channels when the channel count is even."""
    c = x.shape[1]
    if c % 2:
        return x[:, c // 2 : c // 2 + 1].copy()
    lo = c // 2 - 1
    return 0.5 * (x[:, lo : lo + 1] + x[:, lo + 1 : lo + 2])


def center_source_backward(g: np.ndarray, c: int) -> np.ndarray:
    """Scatter the residual-source gradient back onto the input channels."""
    n, _, h, w = g.shape
    gx = np.zeros((n, c, h, w), dtype=g.dtype)
    if c % 2:
        gx[:, c // 2 : c // 2 + 1] = g
    else:
        lo = c // 2 - 1
        gx[:, lo : lo + 1] = 0.5 * g
        gx[:, lo + 1 : lo + 2] = 0.5 * g
    return gx
