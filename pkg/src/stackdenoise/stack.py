"""Image stacks and neighbor-plane example sampling.

A training example for target plane ``i`` is built from the planes around it:
copy-supervised mode takes the symmetric window ``i-K .. i+K`` (width 2K+1,
so K=0 degenerates to single-plane training on two registered acquisitions),
self-supervised mode takes the same window with the center removed (width 2K,
the target plane never appears in its own input). Out-of-range neighbors
reflect across the stack boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metrics import MetricConfig, ssim

MODES = ("copy_supervised", "self_supervised")


@dataclass(frozen=True)
class ImageStack:
    """An ordered set of equally shaped float planes; immutable after load."""

    planes: np.ndarray  # (P, H, W)
    id: str = ""
    plane_spacing: float | None = None

    def __post_init__(self) -> None:
        arr = np.asarray(self.planes)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.ndim != 3:
            raise ValueError(f"expected (P, H, W) planes, got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise ValueError("stack must contain at least one plane")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"stack {self.id!r} contains non-finite samples")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "planes", arr)

    @property
    def n_planes(self) -> int:
        return self.planes.shape[0]

    @property
    def plane_shape(self) -> tuple[int, int]:
        return self.planes.shape[1:]


@dataclass(frozen=True)
class SamplerConfig:
    neighbors_per_side: int
    mode: str = "copy_supervised"

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.neighbors_per_side < 0:
            raise ValueError(
                f"neighbors_per_side must be >= 0, got {self.neighbors_per_side}"
            )
        if self.mode == "self_supervised" and self.neighbors_per_side < 1:
            raise ValueError(
                "self_supervised mode needs at least one neighbor per side: "
                "with K=0 the input window would be empty"
            )

    @property
    def input_width(self) -> int:
        k = self.neighbors_per_side
        return 2 * k + 1 if self.mode == "copy_supervised" else 2 * k


def mode_for_input_width(n_in: int) -> str:
    """Infer the sampling mode from a network's input width: odd widths carry
    the center plane (copy-supervised), even widths omit it."""
    if n_in < 1:
        raise ValueError(f"input width must be >= 1, got {n_in}")
    return "copy_supervised" if n_in % 2 else "self_supervised"


def sampler_for_input_width(n_in: int) -> SamplerConfig:
    mode = mode_for_input_width(n_in)
    k = n_in // 2
    return SamplerConfig(neighbors_per_side=k, mode=mode)


def reflect_index(i: int, offset: int, n_planes: int) -> int:
    """Resolve plane index ``i + offset`` with reflection at the stack ends.

    An out-of-range neighbor maps to its mirror ``i - offset``; if the mirror
    is also out of range (very short stacks), it clamps to the nearest end.
    """
    if not 0 <= i < n_planes:
        raise IndexError(f"plane {i} out of range for {n_planes}-plane stack")
    j = i + offset
    if 0 <= j < n_planes:
        return j
    if n_planes == 1:
        raise IndexError(
            "cannot resolve a neighbor offset in a single-plane stack"
        )
    j = i - offset
    return max(0, min(n_planes - 1, j))


@dataclass(frozen=True)
class SampledExample:
    input_planes: np.ndarray  # (C, H, W)
    target_plane: np.ndarray  # (H, W)
    target_index: int
    source_stack_id: str
    input_indices: tuple[int, ...] = field(default=())


def sample_example(
    stack_in: ImageStack,
    stack_target: ImageStack,
    i: int,
    cfg: SamplerConfig,
) -> SampledExample:
    """Build one example: inputs from ``stack_in``, target from
    ``stack_target``. The two stacks may be the same object (pure
    self-supervision) or two registered acquisitions (copy supervision)."""
    if stack_in.planes.shape != stack_target.planes.shape:
        raise ValueError(
            f"shape mismatch between input stack {stack_in.planes.shape} and "
            f"target stack {stack_target.planes.shape}"
        )
    p = stack_in.n_planes
    if not 0 <= i < p:
        raise IndexError(f"target plane {i} out of range for {p}-plane stack")
    k = cfg.neighbors_per_side
    if cfg.mode == "copy_supervised":
        offsets = range(-k, k + 1)
    else:
        offsets = [o for o in range(-k, k + 1) if o != 0]
    indices = tuple(reflect_index(i, o, p) for o in offsets)
    if cfg.mode == "self_supervised" and i in indices:
        # When the window exceeds the stack, reflect-and-clamp can collapse a
        # neighbor onto the target, which would leak the target's own noise
        # into the input. Fall back to the nearest other plane instead.
        fallback = i + 1 if i + 1 < p else i - 1
        indices = tuple(fallback if j == i else j for j in indices)
    inputs = np.stack([stack_in.planes[j] for j in indices])
    return SampledExample(
        input_planes=inputs,
        target_plane=stack_target.planes[i].copy(),
        target_index=i,
        source_stack_id=stack_in.id,
        input_indices=indices,
    )


def enumerate_epoch(
    stack_pairs: list[tuple[ImageStack, ImageStack]],
    cfg: SamplerConfig,
    seed: int,
) -> list[tuple[int, int]]:
    """One epoch's example order: every (stack, plane) pair exactly once, in
    a seeded permutation."""
    if not stack_pairs:
        raise ValueError("no stacks to enumerate")
    items: list[tuple[int, int]] = []
    for si, (s_in, s_tgt) in enumerate(stack_pairs):
        if s_in.planes.shape != s_tgt.planes.shape:
            raise ValueError(f"stack pair {si} has mismatched shapes")
        items.extend((si, pi) for pi in range(s_in.n_planes))
    rng = np.random.default_rng(seed)
    return [items[j] for j in rng.permutation(len(items))]


@dataclass(frozen=True)
class PlanePairStats:
    i: int
    j: int
    ssim: float
    residual_mean: float
    residual_std: float


def neighbor_similarity_report(
    stack: ImageStack,
    metric_cfg: MetricConfig | None = None,
    distant_offsets: tuple[int, ...] = (),
) -> list[PlanePairStats]:
    """SSIM and residual statistics for every adjacent plane pair, plus any
    requested distant offsets. This is the dataset-suitability check: high
    adjacent similarity is what makes neighbor planes usable as targets."""
    if stack.n_planes < 2:
        raise ValueError("similarity report needs at least two planes")
    cfg = metric_cfg or MetricConfig()
    offsets = [1] + [int(d) for d in distant_offsets]
    rows: list[PlanePairStats] = []
    for d in offsets:
        if d < 1:
            raise ValueError(f"offsets must be >= 1, got {d}")
        for i in range(stack.n_planes - d):
            a = stack.planes[i]
            b = stack.planes[i + d]
            r = a.astype(np.float64) - b.astype(np.float64)
            rows.append(
                PlanePairStats(
                    i=i,
                    j=i + d,
                    ssim=ssim(a, b, cfg),
                    residual_mean=float(r.mean()),
                    residual_std=float(r.std()),
                )
            )
    return rows
