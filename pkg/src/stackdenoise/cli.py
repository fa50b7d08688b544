"""Command-line interface.

Subcommands wire the library into reproducible runs: ``phantom`` (synthetic
clean stacks), ``noise`` (frequency-undersampling corruption), ``train``,
``denoise``, ``evaluate``, ``baseline``, and ``neighbor-ssim``. Every command
is deterministic given its seed and config, writes only under its output
directory, and never embeds timestamps, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import __version__
from .dataio.manifest import (
    StackManifest,
    load_manifests,
    load_stack,
    make_splits,
    save_manifests,
    save_stack,
)
from .dataio.npyio import read_array, write_array
from .dataio.phantom import PhantomSpec, generate_phantom_stack
from .kspace import NoiseRealization, NoiseSpec, combine_copies, corrupt, data_consistency
from .metrics import MetricConfig, evaluate_stack
from .nnet import build_variant, forward, load_params, read_header, save_params, set_params
from .stack import ImageStack, SamplerConfig, sample_example, sampler_for_input_width
from .stack import neighbor_similarity_report
from .trainer import TrainConfig, derive_seed, train


def _json_dump(obj, path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="ascii") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _resolve(base_dir: str, p: str) -> str:
    return p if os.path.isabs(p) else os.path.normpath(os.path.join(base_dir, p))


def _plane_name(stack_id: str, idx: int) -> str:
    return f"{stack_id}_p{idx:04d}.npy"


def _load_all(manifest_path: str) -> tuple[list[StackManifest], list[ImageStack]]:
    manifests = load_manifests(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    return manifests, [load_stack(m, base) for m in manifests]


# ---------------------------------------------------------------- phantom

def cmd_phantom(args) -> int:
    out = args.out
    os.makedirs(os.path.join(out, "clean"), exist_ok=True)
    manifests = []
    for i in range(args.stacks):
        spec = PhantomSpec(
            n_planes=args.planes,
            height=args.height,
            width=args.width,
            drift_rate=args.drift,
            seed=derive_seed(args.seed, 11, i),
        )
        stack = generate_phantom_stack(spec, stack_id=f"ph{i:02d}")
        manifests.append(
            save_stack(stack, os.path.join(out, "clean"), modality="mri")
        )
    splits = make_splits(manifests, "mri")
    id2split = {m.id: s for s, ms in splits.items() for m in ms}
    final = [
        dataclasses.replace(
            m,
            split=id2split[m.id],
            plane_files=tuple(f"clean/{f}" for f in m.plane_files),
        )
        for m in manifests
    ]
    save_manifests(os.path.join(out, "clean_manifest.json"), final)
    counts = {s: len(ms) for s, ms in splits.items()}
    print(
        f"wrote {args.stacks} phantom stacks ({args.planes}x{args.height}x"
        f"{args.width}) to {out} with splits {counts}"
    )
    return 0


# ---------------------------------------------------------------- noise

def cmd_noise(args) -> int:
    if not 0.0 < args.retain <= 1.0:
        raise ValueError(f"--retain must lie in (0, 1], got {args.retain}")
    manifests, stacks = _load_all(args.manifest)
    out = args.out
    for sub in ("noisy", "masks", "spectra"):
        os.makedirs(os.path.join(out, sub), exist_ok=True)

    lam_by_shape: dict[str, float] = {}
    per_stack: dict[str, dict] = {}
    noisy_manifests = []
    for si, (m, stack) in enumerate(zip(manifests, stacks)):
        fractions = []
        files = []
        for pi in range(stack.n_planes):
            spec = NoiseSpec(
                retain_fraction=args.retain,
                seed=derive_seed(args.seed, 17, si, pi),
            )
            r = corrupt(stack.planes[pi], spec)
            name = _plane_name(m.id, pi)
            write_array(os.path.join(out, "noisy", name), r.noisy_image)
            write_array(
                os.path.join(out, "masks", name), r.mask.astype(np.float32)
            )
            write_array(
                os.path.join(out, "spectra", name[:-4] + ".real.npy"),
                np.ascontiguousarray(r.raw_spectrum.real),
            )
            write_array(
                os.path.join(out, "spectra", name[:-4] + ".imag.npy"),
                np.ascontiguousarray(r.raw_spectrum.imag),
            )
            h, w = stack.plane_shape
            lam_by_shape[f"{h}x{w}"] = r.lambda_used
            fractions.append(float(r.mask.mean()))
            files.append(f"noisy/{name}")
        per_stack[m.id] = {
            "mean_realized_retention": float(np.mean(fractions)),
            "per_plane": fractions,
        }
        noisy_manifests.append(dataclasses.replace(m, plane_files=tuple(files)))

    save_manifests(os.path.join(out, "noisy_manifest.json"), noisy_manifests)
    _json_dump(
        {
            "retain_fraction": args.retain,
            "seed": args.seed,
            "lambda_by_shape": lam_by_shape,
            "stacks": per_stack,
        },
        os.path.join(out, "summary.json"),
    )
    overall = float(
        np.mean([s["mean_realized_retention"] for s in per_stack.values()])
    )
    print(
        f"corrupted {len(stacks)} stacks at retain={args.retain} "
        f"(realized {overall:.4f}); artifacts in {out}"
    )
    return 0


def _load_realization(noise_dir: str, stack_id: str, idx: int) -> NoiseRealization:
    name = _plane_name(stack_id, idx)
    mask_path = os.path.join(noise_dir, "masks", name)
    real_path = os.path.join(noise_dir, "spectra", name[:-4] + ".real.npy")
    imag_path = os.path.join(noise_dir, "spectra", name[:-4] + ".imag.npy")
    noisy_path = os.path.join(noise_dir, "noisy", name)
    for p in (mask_path, real_path, imag_path):
        if not os.path.exists(p):
            raise ValueError(
                f"missing noise realization artifact {p}; expected the "
                "masks/ and spectra/ directories produced by 'noise' next to "
                "the manifest"
            )
    mask = read_array(mask_path) != 0.0
    raw = read_array(real_path) + 1j * read_array(imag_path)
    noisy = read_array(noisy_path) if os.path.exists(noisy_path) else np.zeros_like(mask, dtype=np.float64)
    return NoiseRealization(
        noisy_image=noisy, mask=mask, raw_spectrum=raw, lambda_used=0.0
    )


# ---------------------------------------------------------------- train

_TRAIN_KEYS = {
    "epochs", "batch_size", "lr0", "beta1", "beta2", "eps", "weight_decay",
    "seed", "augment", "max_shift", "crop_size",
}
_DEFAULT_AUGMENT = {"mri": "mri_translate", "microscopy": "microscopy_square", "synthetic": "none"}


def _require(section: dict, name: str, keys: set[str] | None = None) -> dict:
    if name not in section:
        raise ValueError(f"config is missing the {name!r} section")
    val = section[name]
    if not isinstance(val, dict):
        raise ValueError(f"config section {name!r} must be an object")
    if keys is not None:
        unknown = set(val) - keys
        if unknown:
            raise ValueError(f"unknown keys in {name!r} section: {sorted(unknown)}")
    return val


def _parse_run_config(path: str, overrides) -> dict:
    with open(path, "r", encoding="ascii") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"config is not valid JSON: {exc}") from exc
    base = os.path.dirname(os.path.abspath(path))

    data = _require(raw, "data", {"manifest", "target_manifest", "dataset_kind"})
    sampler_d = _require(raw, "sampler", {"neighbors_per_side", "mode"})
    train_d = _require(raw, "train", _TRAIN_KEYS)
    model_d = _require(raw, "model", {"variant", "n_in", "width_scale"})
    if "noise" in raw and not isinstance(raw["noise"], dict):
        raise ValueError("config section 'noise' must be an object")
    if "out_dir" not in raw:
        raise ValueError("config is missing 'out_dir'")

    kind = data.get("dataset_kind", "synthetic")
    if kind not in _DEFAULT_AUGMENT:
        raise ValueError(
            f"dataset_kind must be one of {sorted(_DEFAULT_AUGMENT)}, got {kind!r}"
        )
    if "manifest" not in data:
        raise ValueError("config data section needs a 'manifest' path")

    sampler = SamplerConfig(
        neighbors_per_side=int(sampler_d.get("neighbors_per_side", 1)),
        mode=sampler_d.get("mode", "copy_supervised"),
    )
    train_kwargs = dict(train_d)
    train_kwargs.setdefault("augment", _DEFAULT_AUGMENT[kind])
    if overrides.epochs is not None:
        train_kwargs["epochs"] = overrides.epochs
    if overrides.seed is not None:
        train_kwargs["seed"] = overrides.seed
    if overrides.batch_size is not None:
        train_kwargs["batch_size"] = overrides.batch_size
    tcfg = TrainConfig(sampler=sampler, **train_kwargs)

    n_in = int(model_d.get("n_in", sampler.input_width))
    if n_in != sampler.input_width:
        raise ValueError(
            f"model/sampler n_in mismatch: model expects {n_in} input planes "
            f"but the sampler yields {sampler.input_width}; refuse to run"
        )
    variant = model_d.get("variant", "mri")

    manifest_path = _resolve(base, data["manifest"])
    if not os.path.exists(manifest_path):
        raise ValueError(f"data.manifest does not exist: {manifest_path}")
    target_path = None
    if data.get("target_manifest"):
        target_path = _resolve(base, data["target_manifest"])
        if not os.path.exists(target_path):
            raise ValueError(f"data.target_manifest does not exist: {target_path}")

    out_dir = overrides.out if overrides.out else _resolve(base, raw["out_dir"])
    return {
        "dataset_kind": kind,
        "manifest": manifest_path,
        "target_manifest": target_path,
        "sampler": sampler,
        "train": tcfg,
        "variant": variant,
        "n_in": n_in,
        "width_scale": float(model_d.get("width_scale", 1.0)),
        "out_dir": out_dir,
    }


def _pairs_for_split(cfg: dict, split: str):
    manifests, stacks = _load_all(cfg["manifest"])
    by_id = {m.id: s for m, s in zip(manifests, stacks)}
    chosen = [m for m in manifests if m.split == split]
    if cfg["target_manifest"] is not None:
        t_manifests, t_stacks = _load_all(cfg["target_manifest"])
        t_by_id = {m.id: s for m, s in zip(t_manifests, t_stacks)}
        missing = [m.id for m in chosen if m.id not in t_by_id]
        if missing:
            raise ValueError(
                f"target manifest is missing stacks {missing} present in the "
                "input manifest"
            )
        return [(by_id[m.id], t_by_id[m.id]) for m in chosen]
    if cfg["sampler"].mode == "copy_supervised":
        raise ValueError(
            "copy_supervised training requires data.target_manifest (a second "
            "registered acquisition to supply targets)"
        )
    return [(by_id[m.id], by_id[m.id]) for m in chosen]


def cmd_train(args) -> int:
    cfg = _parse_run_config(args.config, args)
    train_pairs = _pairs_for_split(cfg, "train")
    if not train_pairs:
        raise ValueError("no stacks with split='train' in the manifest")
    val_pairs = _pairs_for_split(cfg, "val") or None

    tcfg: TrainConfig = cfg["train"]
    net = build_variant(
        cfg["variant"],
        cfg["n_in"],
        cfg["width_scale"],
        seed=derive_seed(tcfg.seed, 303),
        dtype=np.float32,
    )
    best_params, history = train(train_pairs, val_pairs, net, tcfg)
    set_params(net, best_params)

    out = cfg["out_dir"]
    os.makedirs(out, exist_ok=True)
    save_params(net, os.path.join(out, "model.ckpt"))
    _json_dump(history, os.path.join(out, "history.json"))
    echo = {
        "dataset_kind": cfg["dataset_kind"],
        "manifest": cfg["manifest"],
        "target_manifest": cfg["target_manifest"],
        "sampler": dataclasses.asdict(cfg["sampler"]),
        "train": dataclasses.asdict(tcfg),
        "model": {
            "variant": cfg["variant"],
            "n_in": cfg["n_in"],
            "width_scale": cfg["width_scale"],
        },
        "out_dir": out,
    }
    _json_dump(echo, os.path.join(out, "run_config.json"))
    last = history[-1]
    best_val = min(
        (h["val_mse"] for h in history if h["val_mse"] is not None), default=None
    )
    print(
        f"trained {tcfg.epochs} epochs on {len(train_pairs)} stacks; "
        f"final train_mse={last['train_mse']:.6g}"
        + (f", best val_mse={best_val:.6g}" if best_val is not None else "")
        + f"; model at {os.path.join(out, 'model.ckpt')}"
    )
    return 0


# ---------------------------------------------------------------- denoise

def _denoise_stack(net, sampler: SamplerConfig, stack: ImageStack, batch: int) -> np.ndarray:
    preds = []
    for start in range(0, stack.n_planes, batch):
        xs = [
            sample_example(stack, stack, i, sampler).input_planes
            for i in range(start, min(start + batch, stack.n_planes))
        ]
        x = np.stack(xs).astype(net.dtype, copy=False)
        y = forward(net, x)
        preds.append(y[:, 0])
    return np.concatenate(preds, axis=0)


def _write_predictions(
    out: str,
    sub: str,
    manifests: list[StackManifest],
    planes_by_id: dict[str, np.ndarray],
) -> None:
    os.makedirs(os.path.join(out, sub), exist_ok=True)
    out_manifests = []
    for m in manifests:
        files = []
        planes = planes_by_id[m.id]
        for i in range(planes.shape[0]):
            name = _plane_name(m.id, i)
            write_array(os.path.join(out, sub, name), planes[i])
            files.append(f"{sub}/{name}")
        out_manifests.append(dataclasses.replace(m, plane_files=tuple(files)))
    save_manifests(os.path.join(out, f"{sub}_manifest.json"), out_manifests)


def cmd_denoise(args) -> int:
    header = read_header(args.model)
    net = build_variant(
        header["variant"], header["n_in"], header["width_scale"], dtype=np.float32
    )
    load_params(net, args.model)
    sampler = sampler_for_input_width(header["n_in"])

    manifests, stacks = _load_all(args.manifest)
    if args.split != "all":
        keep = [i for i, m in enumerate(manifests) if m.split == args.split]
        if not keep:
            raise ValueError(f"no stacks with split={args.split!r} in the manifest")
        manifests = [manifests[i] for i in keep]
        stacks = [stacks[i] for i in keep]

    preds = {
        m.id: _denoise_stack(net, sampler, s, args.batch)
        for m, s in zip(manifests, stacks)
    }
    _write_predictions(args.out, "pred", manifests, preds)

    if args.post_process:
        noise_dir = os.path.dirname(os.path.abspath(args.manifest))
        post = {}
        for m, s in zip(manifests, stacks):
            planes = []
            for i in range(s.n_planes):
                r = _load_realization(noise_dir, m.id, i)
                planes.append(data_consistency(preds[m.id][i], r))
            post[m.id] = np.stack(planes)
        _write_predictions(args.out, "pred_post", manifests, post)

    print(
        f"denoised {len(manifests)} stacks with {header['variant']} model "
        f"(n_in={header['n_in']}, mode={sampler.mode})"
        + ("; wrote pred/ and pred_post/" if args.post_process else "; wrote pred/")
    )
    return 0


# ---------------------------------------------------------------- evaluate

def _match_by_id(gt, pred):
    gt_ids = [m.id for m in gt[0]]
    pred_by_id = {m.id: s for m, s in zip(pred[0], pred[1])}
    missing = [i for i in gt_ids if i not in pred_by_id]
    extra = sorted(set(pred_by_id) - set(gt_ids))
    if missing or extra:
        raise ValueError(
            f"prediction and reference manifests list different stacks "
            f"(missing {missing}, extra {extra})"
        )
    return [s for s in gt[1]], [pred_by_id[i] for i in gt_ids]


def cmd_evaluate(args) -> int:
    gt = _load_all(args.gt)
    pred = _load_all(args.pred)
    gt_stacks, pred_stacks = _match_by_id(gt, pred)
    cfg = MetricConfig(protocol=args.protocol, data_range=args.data_range)
    report = evaluate_stack(gt_stacks, pred_stacks, cfg)
    out = args.out
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    report.save_csv(out)
    json_path = (out[:-4] if out.endswith(".csv") else out) + ".json"
    report.save_json(json_path)
    agg = report.aggregate
    print(
        f"evaluated {len(gt_stacks)} stacks ({len(report.rows)} planes, "
        f"protocol={args.protocol}): "
        f"psnr_db={agg['psnr_db'].mean:.3f} ssim={agg['ssim'].mean:.4f} "
        f"nrmse={agg['nrmse'].mean:.4f}; report at {out}"
    )
    return 0


# ---------------------------------------------------------------- baseline

def cmd_baseline(args) -> int:
    manifests, stacks = _load_all(args.manifest)
    if args.mode == "direct":
        preds = {m.id: s.planes.copy() for m, s in zip(manifests, stacks)}
    else:  # combine
        if not args.manifest2:
            raise ValueError(
                "combine mode requires --manifest2 pointing at the second "
                "noise copy's manifest"
            )
        manifests2, _ = _load_all(args.manifest2)
        ids2 = {m.id for m in manifests2}
        missing = [m.id for m in manifests if m.id not in ids2]
        if missing:
            raise ValueError(f"second copy is missing stacks {missing}")
        dir1 = os.path.dirname(os.path.abspath(args.manifest))
        dir2 = os.path.dirname(os.path.abspath(args.manifest2))
        preds = {}
        for m, s in zip(manifests, stacks):
            planes = []
            for i in range(s.n_planes):
                ra = _load_realization(dir1, m.id, i)
                rb = _load_realization(dir2, m.id, i)
                planes.append(combine_copies(ra, rb))
            preds[m.id] = np.stack(planes)
    _write_predictions(args.out, "pred", manifests, preds)
    print(f"wrote {args.mode} baseline predictions for {len(manifests)} stacks to {args.out}")
    return 0


# ---------------------------------------------------------------- neighbor-ssim

def cmd_neighbor_ssim(args) -> int:
    manifests, stacks = _load_all(args.manifest)
    per_stack = {}
    adjacent_all = []
    for m, s in zip(manifests, stacks):
        offsets = (
            (args.distant,) if args.distant > 1 and s.n_planes > args.distant else ()
        )
        rows = neighbor_similarity_report(s, distant_offsets=offsets)
        adjacent = [r.ssim for r in rows if r.j - r.i == 1]
        distant = [r.ssim for r in rows if r.j - r.i == args.distant]
        adjacent_all.extend(adjacent)
        per_stack[m.id] = {
            "adjacent_ssim_mean": float(np.mean(adjacent)),
            "distant_ssim_mean": float(np.mean(distant)) if distant else None,
            "rows": [dataclasses.asdict(r) for r in rows],
        }
    payload = {
        "distant_offset": args.distant,
        "adjacent_ssim_mean_overall": float(np.mean(adjacent_all)),
        "stacks": per_stack,
    }
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    _json_dump(payload, args.out)
    print(
        f"adjacent-plane SSIM mean {payload['adjacent_ssim_mean_overall']:.4f} "
        f"over {len(stacks)} stacks; report at {args.out}"
    )
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="stackdenoise",
        description="Multiplane self-supervised denoising: synthetic noise, "
        "training, inference, and evaluation.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("phantom", help="generate synthetic clean stacks with a manifest")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--stacks", type=int, default=8, help="number of stacks")
    sp.add_argument("--planes", type=int, default=16, help="planes per stack")
    sp.add_argument("--height", type=int, default=64)
    sp.add_argument("--width", type=int, default=64)
    sp.add_argument("--drift", type=float, default=0.02, help="inter-plane drift rate in [0, 1]")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_phantom)

    sp = sub.add_parser("noise", help="corrupt clean stacks with frequency undersampling")
    sp.add_argument("--manifest", required=True, help="clean stack manifest")
    sp.add_argument("--retain", type=float, default=0.10, help="mean retention fraction in (0, 1]")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_noise)

    sp = sub.add_parser("train", help="train a model from a JSON run config")
    sp.add_argument("--config", required=True, help="RunConfig JSON path")
    sp.add_argument("--epochs", type=int, default=None, help="override train.epochs")
    sp.add_argument("--seed", type=int, default=None, help="override train.seed")
    sp.add_argument("--batch-size", type=int, default=None, help="override train.batch_size")
    sp.add_argument("--out", default=None, help="override out_dir")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("denoise", help="apply a trained model plane by plane")
    sp.add_argument("--model", required=True, help="checkpoint path")
    sp.add_argument("--manifest", required=True, help="noisy stack manifest")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument(
        "--post-process",
        action="store_true",
        help="also write spectrally data-consistent predictions (requires the "
        "masks/ and spectra/ artifacts next to the manifest)",
    )
    sp.add_argument("--split", default="all", choices=["all", "train", "val", "test"])
    sp.add_argument("--batch", type=int, default=16, help="inference batch size")
    sp.set_defaults(func=cmd_denoise)

    sp = sub.add_parser("evaluate", help="score predictions against references")
    sp.add_argument("--pred", required=True, help="prediction manifest")
    sp.add_argument("--gt", required=True, help="reference manifest")
    sp.add_argument("--protocol", default="raw", choices=["mri", "microscopy", "raw"])
    sp.add_argument("--data-range", type=float, default=1.0)
    sp.add_argument("--out", required=True, help="report CSV path (JSON written alongside)")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("baseline", help="no-network reconstruction baselines")
    sp.add_argument("--manifest", required=True, help="noisy stack manifest")
    sp.add_argument("--mode", required=True, choices=["direct", "combine"])
    sp.add_argument("--manifest2", default=None, help="second copy manifest (combine mode)")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("neighbor-ssim", help="adjacent-plane similarity report")
    sp.add_argument("--manifest", required=True, help="stack manifest")
    sp.add_argument("--distant", type=int, default=8, help="distant-pair offset")
    sp.add_argument("--out", required=True, help="report JSON path")
    sp.set_defaults(func=cmd_neighbor_ssim)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
