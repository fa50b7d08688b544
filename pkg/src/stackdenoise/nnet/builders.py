"""Constructors for the two published encoder-decoder variants.

Layer ids are the row numbers of the frozen architecture tables, which keeps
checkpoint member names and conformance tests stable. ``width_scale`` shrinks
every interior channel width via max(1, round(c * width_scale)); the input
width (n_in) and the single-channel output are never scaled.
"""

from __future__ import annotations

import numpy as np

from .graph import ConvParams, LayerSpec, NetworkGraph

MRI_LEAKY_ALPHA = 0.1


def _scaled(c: int, width_scale: float) -> int:
    return max(1, round(c * width_scale))


def _he_params(
    rng: np.random.Generator, c_in: int, c_out: int, dtype
) -> ConvParams:
    # He initialization for (leaky) ReLU stacks: Var(w) = 2 / fan_in.
    std = float(np.sqrt(2.0 / (c_in * 9)))
    w = rng.normal(0.0, std, size=(c_out, c_in, 3, 3)).astype(dtype)
    b = np.zeros(c_out, dtype=dtype)
    return ConvParams(w, b)


class _Builder:
    def __init__(self, n_in: int, width_scale: float, seed: int, dtype) -> None:
        if n_in < 1:
            raise ValueError(f"n_in must be >= 1, got {n_in}")
        if not 0.0 < width_scale <= 1.0:
            raise ValueError(f"width_scale must be in (0, 1], got {width_scale}")
        self.rng = np.random.default_rng(seed)
        self.ws = width_scale
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise ValueError("parameters must be float32 or float64")
        self.layers: list[LayerSpec] = [LayerSpec(1, "input", n_in, n_in)]
        self.params: dict[int, ConvParams] = {}
        self.ch = {1: n_in}
        self.nid = 1

    def _top(self) -> int:
        return self.ch[self.nid]

    def conv(self, table_channels: int | None, activation: str, alpha=0.0) -> None:
        # table_channels None => unscaled single-channel output head
        c_in = self._top()
        c_out = 1 if table_channels is None else _scaled(table_channels, self.ws)
        self.nid += 1
        self.layers.append(
            LayerSpec(self.nid, "conv3x3", c_in, c_out, activation, alpha)
        )
        self.params[self.nid] = _he_params(self.rng, c_in, c_out, self.dtype)
        self.ch[self.nid] = c_out

    def pool(self) -> None:
        c = self._top()
        self.nid += 1
        self.layers.append(LayerSpec(self.nid, "maxpool2x2", c, c))
        self.ch[self.nid] = c

    def up(self) -> None:
        c = self._top()
        self.nid += 1
        self.layers.append(LayerSpec(self.nid, "upsample2x2", c, c))
        self.ch[self.nid] = c

    def concat(self, src: int) -> None:
        c_in = self._top()
        c = c_in + self.ch[src]
        self.nid += 1
        self.layers.append(LayerSpec(self.nid, "concat", c_in, c, src=src))
        self.ch[self.nid] = c

    def add_center(self) -> None:
        c = self._top()
        if c != 1:
            raise ValueError("residual add expects a single-channel trunk")
        self.nid += 1
        self.layers.append(LayerSpec(self.nid, "add_center_input", c, c))
        self.ch[self.nid] = c


def build_mri_unet(
    n_in: int,
    width_scale: float = 1.0,
    seed: int = 0,
    dtype=np.float32,
) -> NetworkGraph:
    """Five-level variant: all convs LeakyReLU(0.1) except the linear head.

    Encoder rows 2..13 at width 48; decoder concats pull rows 10/8/6/4 and
    finally the raw input (row 1); head runs 64 -> 32 -> 1.
    """
    b = _Builder(n_in, width_scale, seed, dtype)
    lk = ("leaky_relu", MRI_LEAKY_ALPHA)
    b.conv(48, *lk)  # 2
    b.conv(48, *lk)  # 3
    b.pool()  # 4
    b.conv(48, *lk)  # 5
    b.pool()  # 6
    b.conv(48, *lk)  # 7
    b.pool()  # 8
    b.conv(48, *lk)  # 9
    b.pool()  # 10
    b.conv(48, *lk)  # 11
    b.pool()  # 12
    b.conv(48, *lk)  # 13
    b.up()  # 14
    b.concat(10)  # 15
    b.conv(96, *lk)  # 16
    b.conv(96, *lk)  # 17
    b.up()  # 18
    b.concat(8)  # 19
    b.conv(96, *lk)  # 20
    b.conv(96, *lk)  # 21
    b.up()  # 22
    b.concat(6)  # 23
    b.conv(96, *lk)  # 24
    b.conv(96, *lk)  # 25
    b.up()  # 26
    b.concat(4)  # 27
    b.conv(96, *lk)  # 28
    b.conv(96, *lk)  # 29
    b.up()  # 30
    b.concat(1)  # 31
    b.conv(64, *lk)  # 32
    b.conv(32, *lk)  # 33
    b.conv(None, "linear")  # 34
    return NetworkGraph(b.layers, b.params, "mri", n_in, width_scale)


def build_microscopy_unet(
    n_in: int,
    width_scale: float = 1.0,
    seed: int = 0,
    dtype=np.float32,
) -> NetworkGraph:
    """Two-level residual variant: plain ReLU convs, linear head, then the
    middle input plane (mean of the two central planes when n_in is even)
    added back onto the single-channel output."""
    b = _Builder(n_in, width_scale, seed, dtype)
    b.conv(32, "relu")  # 2
    b.conv(32, "relu")  # 3
    b.pool()  # 4
    b.conv(64, "relu")  # 5
    b.conv(64, "relu")  # 6
    b.pool()  # 7
    b.conv(128, "relu")  # 8
    b.conv(64, "relu")  # 9
    b.up()  # 10
    b.concat(6)  # 11
    b.conv(64, "relu")  # 12
    b.conv(32, "relu")  # 13
    b.up()  # 14
    b.concat(3)  # 15
    b.conv(32, "relu")  # 16
    b.conv(32, "relu")  # 17
    b.conv(None, "linear")  # 18
    b.add_center()  # 19
    return NetworkGraph(b.layers, b.params, "microscopy", n_in, width_scale)


def build_variant(
    variant: str,
    n_in: int,
    width_scale: float = 1.0,
    seed: int = 0,
    dtype=np.float32,
) -> NetworkGraph:
    if variant == "mri":
        return build_mri_unet(n_in, width_scale, seed, dtype)
    if variant == "microscopy":
        return build_microscopy_unet(n_in, width_scale, seed, dtype)
    raise ValueError(f"unknown variant {variant!r}")


def describe(net: NetworkGraph) -> list[tuple]:
    """(id, kind, in_channels, out_channels, activation, src) per layer."""
    return [
        (s.id, s.kind, s.in_channels, s.out_channels, s.activation, s.src)
        for s in net.layers
    ]
