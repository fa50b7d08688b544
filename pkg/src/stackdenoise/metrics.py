"""Image-quality metrics and the per-stack evaluation protocol.

PSNR, SSIM (Gaussian-weighted, valid-region), and NRMSE over plane pairs,
plus ``evaluate_stack`` which applies the modality protocol, aggregates per
plane, and reports 95% t-interval confidence bounds across stacks.
"""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import stats

PROTOCOLS = ("raw", "mri", "microscopy")


@dataclass(frozen=True)
class MetricConfig:
    data_range: float = 1.0
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03
    protocol: str = "raw"

    def __post_init__(self) -> None:
        if self.data_range <= 0:
            raise ValueError(f"data_range must be positive, got {self.data_range}")
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise ValueError(f"ssim_window must be odd and >= 3, got {self.ssim_window}")
        if self.ssim_sigma <= 0:
            raise ValueError(f"ssim_sigma must be positive, got {self.ssim_sigma}")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")


def _check_pair(gt: np.ndarray, pred: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if gt.shape != pred.shape:
        raise ValueError(f"shape mismatch: gt {gt.shape} vs pred {pred.shape}")
    if gt.ndim != 2:
        raise ValueError(f"metrics expect 2D planes, got ndim={gt.ndim}")
    return gt, pred


def psnr(gt: np.ndarray, pred: np.ndarray, cfg: MetricConfig | None = None) -> float:
    """10 log10(range^2 / MSE); +inf when the images are identical."""
    cfg = cfg or MetricConfig()
    gt, pred = _check_pair(gt, pred)
    mse = float(np.mean((gt - pred) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(cfg.data_range**2 / mse)


def _gaussian_1d(window: int, sigma: float) -> np.ndarray:
    r = np.arange(window, dtype=np.float64) - (window - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable Gaussian, valid region only (no padding enters the statistics)
    a = sliding_window_view(img, g.size, axis=1) @ g
    return sliding_window_view(a, g.size, axis=0) @ g


def ssim(gt: np.ndarray, pred: np.ndarray, cfg: MetricConfig | None = None) -> float:
    """Mean structural similarity over the valid filter region."""
    cfg = cfg or MetricConfig()
    gt, pred = _check_pair(gt, pred)
    win = cfg.ssim_window
    if min(gt.shape) < win:
        raise ValueError(
            f"image {gt.shape} is smaller than the {win}x{win} SSIM window"
        )
    g = _gaussian_1d(win, cfg.ssim_sigma)
    c1 = (cfg.ssim_k1 * cfg.data_range) ** 2
    c2 = (cfg.ssim_k2 * cfg.data_range) ** 2

    mu1 = _filter_valid(gt, g)
    mu2 = _filter_valid(pred, g)
    s11 = _filter_valid(gt * gt, g) - mu1 * mu1
    s22 = _filter_valid(pred * pred, g) - mu2 * mu2
    s12 = _filter_valid(gt * pred, g) - mu1 * mu2
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


def nrmse(gt: np.ndarray, pred: np.ndarray) -> float:
    """||gt - pred||_2 / ||gt||_2."""
    gt, pred = _check_pair(gt, pred)
    denom = float(np.linalg.norm(gt))
    if denom == 0.0:
        raise ValueError("NRMSE is undefined for an all-zero reference image")
    return float(np.linalg.norm(gt - pred)) / denom


def normalize_for_metrics_microscopy(
    gt_high: np.ndarray, pred: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Percentile-normalize the high-SNR reference to [0, 1] and fit a
    closed-form least-squares affine map a*pred + b onto it.

    A constant prediction has no least-squares slope; it degrades to
    (a=0, b=mean) with a warning rather than an error.
    """
    gt_high, pred = _check_pair(gt_high, pred)
    p_lo, p_hi = np.percentile(gt_high, [0.1, 99.9])
    if p_hi <= p_lo:
        raise ValueError(
            "degenerate reference: 0.1 and 99.9 percentiles coincide "
            f"({p_lo!r}); cannot normalize"
        )
    gt_n = (gt_high - p_lo) / (p_hi - p_lo)
    mp = float(pred.mean())
    mg = float(gt_n.mean())
    var_p = float((pred * pred).mean()) - mp * mp
    if var_p <= 0.0:
        warnings.warn(
            "constant prediction: affine fit degenerates to the reference mean",
            RuntimeWarning,
            stacklevel=2,
        )
        a, b = 0.0, mg
    else:
        a = (float((pred * gt_n).mean()) - mp * mg) / var_p
        b = mg - a * mp
    return gt_n, a * pred + b


@dataclass(frozen=True)
class MetricRow:
    id: str
    plane: int
    psnr_db: float
    ssim: float
    nrmse: float


@dataclass(frozen=True)
class AggregateStat:
    mean: float
    ci_low: float
    ci_high: float
    n: int


@dataclass
class MetricReport:
    rows: list[MetricRow]
    aggregate: dict[str, AggregateStat]
    protocol: str
    config: MetricConfig = field(default_factory=MetricConfig)

    COLUMNS = ("id", "plane", "psnr_db", "ssim", "nrmse")

    def to_json_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "columns": list(self.COLUMNS),
            "rows": [asdict(r) for r in self.rows],
            "aggregate": {k: asdict(v) for k, v in self.aggregate.items()},
        }

    def save_json(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="ascii") as fh:
            json.dump(self.to_json_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    def save_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="ascii", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r.id, r.plane, repr(r.psnr_db), repr(r.ssim), repr(r.nrmse)])


def _t_interval(values: list[float]) -> tuple[float, float, float]:
    vals = np.asarray(values, dtype=np.float64)
    mean = float(np.mean(vals))
    if vals.size < 2 or not np.all(np.isfinite(vals)):
        # a single sample (or an infinite sentinel) has no finite interval
        return mean, math.nan, math.nan
    sem = float(np.std(vals, ddof=1)) / math.sqrt(vals.size)
    if sem == 0.0:
        return mean, mean, mean
    tcrit = float(stats.t.ppf(0.975, vals.size - 1))
    return mean, mean - tcrit * sem, mean + tcrit * sem


def evaluate_stack(gt_stacks, pred_stacks, cfg: MetricConfig | None = None) -> MetricReport:
    """Score prediction stacks against references, plane by plane.

    Accepts a single stack or a list for each side. Under the microscopy
    protocol each plane pair is affine-matched to the percentile-normalized
    reference before scoring; other protocols score values as given.
    Aggregate confidence intervals are computed across per-stack means when
    several stacks are present, otherwise across planes.
    """
    cfg = cfg or MetricConfig()
    gt_list = gt_stacks if isinstance(gt_stacks, (list, tuple)) else [gt_stacks]
    pred_list = pred_stacks if isinstance(pred_stacks, (list, tuple)) else [pred_stacks]
    if len(gt_list) != len(pred_list):
        raise ValueError(
            f"stack count mismatch: {len(gt_list)} references vs "
            f"{len(pred_list)} predictions"
        )
    if not gt_list:
        raise ValueError("no stacks to evaluate")

    rows: list[MetricRow] = []
    per_stack: dict[str, list[list[float]]] = {"psnr_db": [], "ssim": [], "nrmse": []}
    for gt_stack, pred_stack in zip(gt_list, pred_list):
        if gt_stack.planes.shape != pred_stack.planes.shape:
            raise ValueError(
                f"stack {gt_stack.id!r}: shape mismatch "
                f"{gt_stack.planes.shape} vs {pred_stack.planes.shape}"
            )
        stack_vals: dict[str, list[float]] = {"psnr_db": [], "ssim": [], "nrmse": []}
        for p in range(gt_stack.planes.shape[0]):
            g = gt_stack.planes[p]
            r = pred_stack.planes[p]
            if cfg.protocol == "microscopy":
                g, r = normalize_for_metrics_microscopy(g, r)
            row = MetricRow(
                id=gt_stack.id,
                plane=p,
                psnr_db=psnr(g, r, cfg),
                ssim=ssim(g, r, cfg),
                nrmse=nrmse(g, r),
            )
            rows.append(row)
            for k in stack_vals:
                stack_vals[k].append(getattr(row, k))
        for k in per_stack:
            per_stack[k].append(stack_vals[k])

    aggregate = {}
    for k, groups in per_stack.items():
        if len(groups) > 1:
            samples = [float(np.mean(g)) for g in groups]
        else:
            samples = groups[0]
        mean, lo, hi = _t_interval(samples)
        aggregate[k] = AggregateStat(mean, lo, hi, len(samples))
    return MetricReport(rows=rows, aggregate=aggregate, protocol=cfg.protocol, config=cfg)
