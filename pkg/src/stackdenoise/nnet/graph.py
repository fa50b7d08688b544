"""Layer-graph container and the forward / reverse-mode executors.

A network is a flat list of ``LayerSpec`` rows executed in order; each layer
consumes the previous layer's output, and ``concat`` rows additionally pull
the stored output of an earlier layer (skip connections). Layer ids double as
checkpoint keys, so they are stable identifiers, not list positions.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import ops

VALID_KINDS = frozenset(
    {"input", "conv3x3", "maxpool2x2", "upsample2x2", "concat", "add_center_input"}
)
VALID_ACTIVATIONS = frozenset({"linear", "relu", "leaky_relu"})


@dataclass(frozen=True)
class LayerSpec:
    """One row of the architecture table."""

    id: int
    kind: str
    in_channels: int
    out_channels: int
    activation: str = "linear"  # conv3x3 only; fused post-conv nonlinearity
    alpha: float = 0.0  # leaky_relu negative slope
    src: int | None = None  # concat: id of the earlier layer being appended

    def __post_init__(self) -> None:
        if self.kind not in VALID_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in VALID_ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind == "concat" and self.src is None:
            raise ValueError(f"concat layer {self.id} is missing its src id")
        if self.kind != "concat" and self.src is not None:
            raise ValueError(f"layer {self.id}: src is only valid on concat layers")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(f"layer {self.id}: channel counts must be positive")


@dataclass
class ConvParams:
    weight: np.ndarray  # (C_out, C_in, 3, 3)
    bias: np.ndarray  # (C_out,)


@dataclass
class NetworkGraph:
    layers: list[LayerSpec]
    params: dict[int, ConvParams]
    variant: str
    n_in: int
    width_scale: float = 1.0
    _cache: dict | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.layers or self.layers[0].kind != "input":
            raise ValueError("graph must start with an input layer")
        seen: set[int] = set()
        for spec in self.layers:
            if spec.id in seen:
                raise ValueError(f"duplicate layer id {spec.id}")
            if spec.kind == "concat" and spec.src not in seen:
                raise ValueError(
                    f"concat layer {spec.id} references {spec.src}, which is "
                    "not an earlier layer"
                )
            seen.add(spec.id)
        for spec in self.layers:
            if spec.kind == "conv3x3" and spec.id not in self.params:
                raise ValueError(f"missing parameters for conv layer {spec.id}")

    @property
    def n_pool_levels(self) -> int:
        return sum(1 for s in self.layers if s.kind == "maxpool2x2")

    @property
    def dtype(self) -> np.dtype:
        first = min(self.params)
        return self.params[first].weight.dtype

    def param_items(self):
        """Flat (key, array) view used by the optimizer; keys are
        (layer_id, "weight"|"bias") tuples in ascending id order."""
        for lid in sorted(self.params):
            yield (lid, "weight"), self.params[lid].weight
            yield (lid, "bias"), self.params[lid].bias

    def num_params(self) -> int:
        return sum(arr.size for _, arr in self.param_items())


def clone_params(params: dict[int, ConvParams]) -> dict[int, ConvParams]:
    return {
        lid: ConvParams(p.weight.copy(), p.bias.copy()) for lid, p in params.items()
    }


def set_params(net: NetworkGraph, params: dict[int, ConvParams]) -> None:
    if set(params) != set(net.params):
        raise ValueError("parameter dict does not match the graph's conv layers")
    for lid, p in params.items():
        cur = net.params[lid]
        if p.weight.shape != cur.weight.shape or p.bias.shape != cur.bias.shape:
            raise ValueError(f"shape mismatch for layer {lid} parameters")
    net.params = clone_params(params)
    net._cache = None


def graph_hash(net: NetworkGraph) -> str:
    """SHA-256 over the canonical architecture description (not the values
    of the parameters), so checkpoints can refuse mismatched graphs."""
    rows = [f"{net.variant}|{net.n_in}|{net.width_scale:.6f}"]
    for s in net.layers:
        rows.append(
            f"{s.id}:{s.kind}:{s.in_channels}:{s.out_channels}:"
            f"{s.activation}:{s.alpha:.6f}:{s.src}"
        )
    return hashlib.sha256("\n".join(rows).encode("ascii")).hexdigest()


def walk_shapes(net: NetworkGraph, height: int, width: int) -> list[tuple]:
    """Static shape walk: (id, kind, out_channels, out_h, out_w) per layer.

    Raises if any maxpool would see an odd spatial dimension.
    """
    out: dict[int, tuple[int, int, int]] = {}
    rows = []
    prev = None
    for s in net.layers:
        if s.kind == "input":
            shape = (s.out_channels, height, width)
        elif s.kind == "maxpool2x2":
            c, h, w = out[prev]
            if h % 2 or w % 2:
                raise ValueError(
                    f"layer {s.id}: maxpool2x2 input {h}x{w} is not even; "
                    f"spatial dims must be divisible by {2 ** net.n_pool_levels}"
                )
            shape = (c, h // 2, w // 2)
        elif s.kind == "upsample2x2":
            c, h, w = out[prev]
            shape = (c, h * 2, w * 2)
        elif s.kind == "concat":
            c, h, w = out[prev]
            c2, h2, w2 = out[s.src]
            if (h2, w2) != (h, w):
                raise ValueError(f"layer {s.id}: concat spatial mismatch")
            shape = (c + c2, h, w)
        elif s.kind == "add_center_input":
            shape = out[prev]
        else:  # conv3x3
            _, h, w = out[prev]
            shape = (s.out_channels, h, w)
        if shape[0] != s.out_channels:
            raise ValueError(
                f"layer {s.id}: computed {shape[0]} channels, spec says "
                f"{s.out_channels}"
            )
        out[s.id] = shape
        rows.append((s.id, s.kind, *shape))
        prev = s.id
    return rows


def forward(net: NetworkGraph, x: np.ndarray) -> np.ndarray:
    """Run the graph on a batch, caching intermediates for backward()."""
    if x.ndim != 4:
        raise ValueError(f"expected (N, C, H, W) input, got ndim={x.ndim}")
    n, c, h, w = x.shape
    if c != net.n_in:
        raise ValueError(f"graph expects {net.n_in} input channels, got {c}")
    div = 2**net.n_pool_levels
    if h % div or w % div:
        raise ValueError(
            f"spatial dims {h}x{w} must be divisible by {div} "
            f"({net.n_pool_levels} pooling levels)"
        )
    if x.dtype != net.dtype:
        raise ValueError(f"input dtype {x.dtype} != parameter dtype {net.dtype}")

    outputs: dict[int, np.ndarray] = {}
    pre: dict[int, np.ndarray] = {}
    pool_idx: dict[int, np.ndarray] = {}
    prev = None
    for s in net.layers:
        if s.kind == "input":
            y = x
        elif s.kind == "conv3x3":
            p = net.params[s.id]
            z = ops.conv3x3_forward(outputs[prev], p.weight, p.bias)
            if s.activation == "relu":
                pre[s.id] = z
                y = ops.relu_forward(z)
            elif s.activation == "leaky_relu":
                pre[s.id] = z
                y = ops.leaky_relu_forward(z, s.alpha)
            else:
                y = z
        elif s.kind == "maxpool2x2":
            y, idx = ops.maxpool2x2_forward(outputs[prev])
            pool_idx[s.id] = idx
        elif s.kind == "upsample2x2":
            y = ops.upsample2x2_forward(outputs[prev])
        elif s.kind == "concat":
            y = ops.concat_forward(outputs[prev], outputs[s.src])
        else:  # add_center_input
            y = outputs[prev] + ops.center_source(x)
        outputs[s.id] = y
        prev = s.id

    net._cache = {"outputs": outputs, "pre": pre, "pool_idx": pool_idx, "x": x}
    return outputs[prev]


def backward(
    net: NetworkGraph, loss_grad: np.ndarray, need_input_grad: bool = False
):
    """Reverse-mode sweep. Returns {layer_id: (grad_weight, grad_bias)} for
    every conv layer, plus the input gradient when requested.

    Gradients from multiple consumers (skip connections, the residual add)
    accumulate by summation. Requires a prior forward() on this graph.
    """
    if net._cache is None:
        raise RuntimeError("backward() called before forward()")
    outputs = net._cache["outputs"]
    pre = net._cache["pre"]
    pool_idx = net._cache["pool_idx"]
    x = net._cache["x"]
    last = net.layers[-1].id
    if loss_grad.shape != outputs[last].shape:
        raise ValueError(
            f"loss gradient shape {loss_grad.shape} != output shape "
            f"{outputs[last].shape}"
        )

    grads: dict[int, np.ndarray] = {last: loss_grad}
    pgrads: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    input_id = net.layers[0].id

    def acc(lid: int, g: np.ndarray) -> None:
        grads[lid] = g if lid not in grads else grads[lid] + g

    prev_of = {
        net.layers[i].id: net.layers[i - 1].id for i in range(1, len(net.layers))
    }

    for s in reversed(net.layers):
        if s.kind == "input":
            continue
        g = grads.pop(s.id, None)
        if g is None:
            continue  # dead branch; cannot occur in the built variants
        prev = prev_of[s.id]
        if s.kind == "conv3x3":
            if s.activation == "relu":
                gz = ops.relu_backward(g, pre[s.id])
            elif s.activation == "leaky_relu":
                gz = ops.leaky_relu_backward(g, pre[s.id], s.alpha)
            else:
                gz = g
            p = net.params[s.id]
            pgrads[s.id] = ops.conv3x3_backward_params(outputs[prev], gz)
            if prev != input_id or need_input_grad:
                acc(prev, ops.conv3x3_backward_input(gz, p.weight))
        elif s.kind == "maxpool2x2":
            acc(prev, ops.maxpool2x2_backward(g, pool_idx[s.id]))
        elif s.kind == "upsample2x2":
            acc(prev, ops.upsample2x2_backward(g))
        elif s.kind == "concat":
            c_prev = outputs[prev].shape[1]
            g1, g2 = ops.concat_backward(g, c_prev)
            acc(prev, g1)
            acc(s.src, g2)
        else:  # add_center_input
            acc(prev, g)
            if need_input_grad:
                acc(input_id, ops.center_source_backward(g, x.shape[1]))

    if need_input_grad:
        return pgrads, grads.get(input_id, np.zeros_like(x))
    return pgrads
