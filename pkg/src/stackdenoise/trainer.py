"""From-scratch training loop: MSE + Adam + cosine learning-rate decay.

The loop is deterministic for a fixed config seed: per-epoch shuffle and
augmentation streams are derived from the seed with namespaced SeedSequence
keys, so runs are bit-reproducible on a fixed backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nnet.graph import NetworkGraph, backward, clone_params, forward
from .stack import ImageStack, SamplerConfig, enumerate_epoch, sample_example

AUGMENT_KINDS = ("none", "mri_translate", "microscopy_square")


@dataclass(frozen=True)
class TrainConfig:
    sampler: SamplerConfig
    epochs: int = 100
    batch_size: int = 16
    lr0: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0  # pinned; the published recipe uses none
    seed: int = 0
    augment: str = "none"
    max_shift: int = 64
    crop_size: int = 256

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.weight_decay != 0.0:
            raise ValueError("weight_decay is fixed at 0.0 in this recipe")
        if self.augment not in AUGMENT_KINDS:
            raise ValueError(f"augment must be one of {AUGMENT_KINDS}")
        if self.max_shift < 0:
            raise ValueError(f"max_shift must be >= 0, got {self.max_shift}")
        if self.crop_size < 1:
            raise ValueError(f"crop_size must be >= 1, got {self.crop_size}")


def cosine_lr(epoch: int, cfg: TrainConfig) -> float:
    """Half-cosine decay from lr0 (epoch 0) to 0 (last epoch)."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside 0..{cfg.epochs - 1}")
    if cfg.epochs == 1:
        return cfg.lr0
    return 0.5 * cfg.lr0 * (1.0 + math.cos(math.pi * epoch / (cfg.epochs - 1)))


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def for_params(cls, param_items) -> "AdamState":
        items = list(param_items)
        return cls(
            m={k: np.zeros_like(a) for k, a in items},
            v={k: np.zeros_like(a) for k, a in items},
        )


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to ``pred``."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    grad = (2.0 / diff.size) * diff
    return loss, grad


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, cfg: TrainConfig) -> None:
    """One Adam update, in place. ``params`` and ``grads`` share keys.

    The step counter advances once per call (one batch), not once per tensor.
    Non-finite gradients abort with a named error rather than poisoning the
    parameters.
    """
    if set(params) != set(grads):
        raise ValueError("parameter and gradient key sets differ")
    state.t += 1
    t = state.t
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for k in params:
        g = grads[k]
        if not np.all(np.isfinite(g)):
            raise RuntimeError(f"non-finite gradient for parameter {k}")
        m = state.m[k]
        v = state.v[k]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        params[k] -= lr * mhat / (np.sqrt(vhat) + cfg.eps)


def draw_translation(rng: np.random.Generator, max_shift: int) -> tuple[int, int]:
    """Signed integer (dy, dx), each magnitude uniform on 0..max_shift."""
    dy = int(rng.integers(-max_shift, max_shift + 1))
    dx = int(rng.integers(-max_shift, max_shift + 1))
    return dy, dx


def translate_plane(plane: np.ndarray, dy: int, dx: int, fill: float) -> np.ndarray:
    """Shift content by (dy, dx) (down, right); vacated area takes ``fill``."""
    h, w = plane.shape
    if abs(dy) >= h or abs(dx) >= w:
        raise ValueError(
            f"shift ({dy}, {dx}) does not leave any overlap with a {h}x{w} plane"
        )
    out = np.full_like(plane, fill)
    ys = slice(max(0, dy), h + min(0, dy))
    xs = slice(max(0, dx), w + min(0, dx))
    ys_src = slice(max(0, -dy), h + min(0, -dy))
    xs_src = slice(max(0, -dx), w + min(0, -dx))
    out[ys, xs] = plane[ys_src, xs_src]
    return out


def augment_mri(
    inputs: np.ndarray,
    target: np.ndarray,
    rng: np.random.Generator,
    max_shift: int = 64,
) -> tuple[np.ndarray, np.ndarray]:
    """One shared random translation applied to every input plane and the
    target; each plane's vacated border takes that plane's own minimum."""
    h, w = target.shape
    if max_shift >= min(h, w):
        raise ValueError(
            f"max_shift {max_shift} must be smaller than the image extent {h}x{w}"
        )
    dy, dx = draw_translation(rng, max_shift)
    out = np.stack(
        [translate_plane(p, dy, dx, float(p.min())) for p in inputs]
    )
    tgt = translate_plane(target, dy, dx, float(target.min()))
    return out, tgt


def draw_square_aug(
    rng: np.random.Generator, h: int, w: int, crop: int
) -> tuple[int, bool, bool, int, int]:
    """Rotation quarter-turns, flip coins, crop origin. Draw order is fixed:
    rotation, horizontal flip, vertical flip, row origin, column origin."""
    k = int(rng.integers(0, 4))
    flip_h = bool(rng.integers(0, 2))
    flip_v = bool(rng.integers(0, 2))
    h2, w2 = (w, h) if k % 2 else (h, w)
    if h2 < crop or w2 < crop:
        raise ValueError(f"plane {h}x{w} is smaller than the {crop}x{crop} crop")
    oy = int(rng.integers(0, h2 - crop + 1))
    ox = int(rng.integers(0, w2 - crop + 1))
    return k, flip_h, flip_v, oy, ox


def apply_square_aug(
    plane: np.ndarray, k: int, flip_h: bool, flip_v: bool, oy: int, ox: int, crop: int
) -> np.ndarray:
    q = np.rot90(plane, k)
    if flip_h:
        q = q[:, ::-1]
    if flip_v:
        q = q[::-1, :]
    return np.ascontiguousarray(q[oy : oy + crop, ox : ox + crop])


def augment_microscopy(
    inputs: np.ndarray,
    target: np.ndarray,
    rng: np.random.Generator,
    crop_size: int = 256,
) -> tuple[np.ndarray, np.ndarray]:
    """Shared rot90 + flips + crop for all planes of one example, so the
    input window and target stay registered."""
    h, w = target.shape
    draw = draw_square_aug(rng, h, w, crop_size)
    out = np.stack([apply_square_aug(p, *draw, crop_size) for p in inputs])
    tgt = apply_square_aug(target, *draw, crop_size)
    return out, tgt


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _augment_fn(cfg: TrainConfig):
    if cfg.augment == "mri_translate":
        return lambda x, t, rng: augment_mri(x, t, rng, cfg.max_shift)
    if cfg.augment == "microscopy_square":
        return lambda x, t, rng: augment_microscopy(x, t, rng, cfg.crop_size)
    return None


def _batch_forward_loss(net: NetworkGraph, xs: list, ts: list) -> tuple[float, np.ndarray, np.ndarray]:
    x = np.stack(xs).astype(net.dtype, copy=False)
    t = np.stack(ts)[:, None].astype(net.dtype, copy=False)
    y = forward(net, x)
    loss, grad = mse_loss(y, t)
    return loss, grad, y


def validation_mse(
    pairs: list[tuple[ImageStack, ImageStack]],
    net: NetworkGraph,
    cfg: TrainConfig,
) -> float:
    """Mean per-example MSE over every plane, fixed order, no augmentation,
    no parameter updates."""
    if not pairs:
        raise ValueError("validation set is empty")
    total = 0.0
    count = 0
    order = [
        (si, pi) for si, (s, _) in enumerate(pairs) for pi in range(s.n_planes)
    ]
    for start in range(0, len(order), cfg.batch_size):
        chunk = order[start : start + cfg.batch_size]
        xs, ts = [], []
        for si, pi in chunk:
            ex = sample_example(pairs[si][0], pairs[si][1], pi, cfg.sampler)
            xs.append(ex.input_planes)
            ts.append(ex.target_plane)
        loss, _, _ = _batch_forward_loss(net, xs, ts)
        total += loss * len(chunk)
        count += len(chunk)
    return total / count


def train(
    train_pairs: list[tuple[ImageStack, ImageStack]],
    val_pairs: list[tuple[ImageStack, ImageStack]] | None,
    net: NetworkGraph,
    cfg: TrainConfig,
    log_fn=None,
) -> tuple[dict, list[dict]]:
    """Optimize ``net`` in place; return (best_params, history).

    ``best_params`` is a deep copy of the parameters from the epoch with the
    lowest validation MSE (the final epoch when no validation set is given).
    ``history`` holds one record per epoch: epoch, train_mse, val_mse, lr.
    """
    if not train_pairs:
        raise ValueError("training set is empty")
    if cfg.sampler.input_width != net.n_in:
        raise ValueError(
            f"sampler yields {cfg.sampler.input_width} input planes but the "
            f"network expects {net.n_in}"
        )
    aug = _augment_fn(cfg)
    params = dict(net.param_items())
    state = AdamState.for_params(params.items())
    history: list[dict] = []
    best_val = math.inf
    best_params = clone_params(net.params)

    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg)
        order = enumerate_epoch(train_pairs, cfg.sampler, derive_seed(cfg.seed, 101, epoch))
        arng = np.random.default_rng(derive_seed(cfg.seed, 202, epoch))
        loss_sum = 0.0
        n_seen = 0
        for start in range(0, len(order), cfg.batch_size):
            chunk = order[start : start + cfg.batch_size]
            xs, ts = [], []
            for si, pi in chunk:
                ex = sample_example(train_pairs[si][0], train_pairs[si][1], pi, cfg.sampler)
                inp, tgt = ex.input_planes, ex.target_plane
                if aug is not None:
                    inp, tgt = aug(inp, tgt, arng)
                xs.append(inp)
                ts.append(tgt)
            loss, lgrad, _ = _batch_forward_loss(net, xs, ts)
            if not math.isfinite(loss):
                raise RuntimeError(
                    f"non-finite training loss at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            pgrads = backward(net, lgrad)
            grads = {}
            for lid, (gw, gb) in pgrads.items():
                grads[(lid, "weight")] = gw
                grads[(lid, "bias")] = gb
            adam_step(params, grads, state, lr, cfg)
            loss_sum += loss * len(chunk)
            n_seen += len(chunk)

        record = {
            "epoch": epoch,
            "train_mse": loss_sum / n_seen,
            "val_mse": validation_mse(val_pairs, net, cfg) if val_pairs else None,
            "lr": lr,
        }
        history.append(record)
        if log_fn is not None:
            log_fn(record)
        if val_pairs:
            if record["val_mse"] < best_val:
                best_val = record["val_mse"]
                best_params = clone_params(net.params)
        else:
            best_params = clone_params(net.params)

    return best_params, history
