"""Command-line interface: artifact layouts, config parsing, determinism,
and the identity-model end-to-end path.

The identity trick: a center-input residual network with all conv parameters
zeroed is exactly the identity on the center plane, which lets inference and
post-processing be verified against closed-form expectations without
training anything.
"""

from __future__ import annotations

import filecmp
import json
import os
import shutil
import subprocess

import numpy as np
import pytest

from stackdenoise.cli import main
from stackdenoise.dataio.manifest import load_manifests, load_stack
from stackdenoise.dataio.npyio import read_array
from stackdenoise.kspace import NoiseRealization, data_consistency
from stackdenoise.nnet import build_microscopy_unet, save_params, set_params
from stackdenoise.nnet.graph import ConvParams


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """phantom -> noise, shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cliws")
    clean = root / "clean"
    noisy = root / "noisy"
    assert (
        run_cli(
            "phantom", "--out", clean, "--stacks", 3, "--planes", 6,
            "--height", 32, "--width", 32, "--seed", 0,
        )
        == 0
    )
    assert (
        run_cli(
            "noise", "--manifest", clean / "clean_manifest.json",
            "--retain", 0.25, "--seed", 1, "--out", noisy,
        )
        == 0
    )
    return root


def zero_identity_checkpoint(path, n_in=3):
    """Checkpoint whose forward pass is exactly `center input plane`."""
    net = build_microscopy_unet(n_in, 0.25, seed=0, dtype=np.float32)
    zeros = {
        lid: ConvParams(np.zeros_like(p.weight), np.zeros_like(p.bias))
        for lid, p in net.params.items()
    }
    set_params(net, zeros)
    save_params(net, path)


# --- version / entry point ------------------------------------------------------


def test_console_script_version():
    exe = shutil.which("stackdenoise")
    assert exe is not None, "console script not installed"
    out = subprocess.run([exe, "--version"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "stackdenoise" in out.stdout


# --- phantom ---------------------------------------------------------------------


def test_phantom_manifest_and_splits(workspace):
    manifests = load_manifests(workspace / "clean" / "clean_manifest.json")
    assert len(manifests) == 3
    assert sorted(m.split for m in manifests) == ["test", "train", "val"]
    for m in manifests:
        stack = load_stack(m, workspace / "clean")
        assert stack.planes.shape == (6, 32, 32)


def test_phantom_deterministic(tmp_path):
    for sub in ("a", "b"):
        run_cli(
            "phantom", "--out", tmp_path / sub, "--stacks", 2, "--planes", 3,
            "--height", 32, "--width", 32, "--seed", 4,
        )
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.diff_files


# --- noise ------------------------------------------------------------------------


def test_noise_artifact_layout(workspace):
    noisy = workspace / "noisy"
    manifests = load_manifests(noisy / "noisy_manifest.json")
    assert len(manifests) == 3
    for m in manifests:
        for i in range(6):
            assert (noisy / "noisy" / f"{m.id}_p{i:04d}.npy").exists()
            assert (noisy / "masks" / f"{m.id}_p{i:04d}.npy").exists()
            assert (noisy / "spectra" / f"{m.id}_p{i:04d}.real.npy").exists()
            assert (noisy / "spectra" / f"{m.id}_p{i:04d}.imag.npy").exists()
    summary = json.loads((noisy / "summary.json").read_text())
    assert summary["retain_fraction"] == 0.25
    assert summary["seed"] == 1
    assert "32x32" in summary["lambda_by_shape"]
    for sid, entry in summary["stacks"].items():
        assert abs(entry["mean_realized_retention"] - 0.25) < 0.05
        assert len(entry["per_plane"]) == 6


def test_noise_full_retention_is_lossless(workspace, tmp_path):
    out = tmp_path / "lossless"
    assert (
        run_cli(
            "noise", "--manifest", workspace / "clean" / "clean_manifest.json",
            "--retain", 1.0, "--seed", 0, "--out", out,
        )
        == 0
    )
    clean_manifests = load_manifests(workspace / "clean" / "clean_manifest.json")
    noisy_manifests = load_manifests(out / "noisy_manifest.json")
    for cm, nm in zip(clean_manifests, noisy_manifests):
        c = load_stack(cm, workspace / "clean")
        n = load_stack(nm, out)
        np.testing.assert_allclose(n.planes, c.planes, atol=1e-10)


def test_noise_reruns_are_byte_identical(workspace, tmp_path):
    outs = []
    for sub in ("n1", "n2"):
        out = tmp_path / sub
        run_cli(
            "noise", "--manifest", workspace / "clean" / "clean_manifest.json",
            "--retain", 0.25, "--seed", 7, "--out", out,
        )
        outs.append(out)
    for rel in sorted(
        p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file()
    ):
        a = (outs[0] / rel).read_bytes()
        b = (outs[1] / rel).read_bytes()
        assert a == b, f"{rel} differs between identical runs"


def test_noise_rejects_bad_retain(workspace, tmp_path, capsys):
    rc = run_cli(
        "noise", "--manifest", workspace / "clean" / "clean_manifest.json",
        "--retain", 0.0, "--out", tmp_path / "x",
    )
    assert rc == 1
    assert "retain" in capsys.readouterr().err


# --- denoise ------------------------------------------------------------------------


def test_denoise_identity_model_reproduces_input(workspace, tmp_path):
    ckpt = tmp_path / "identity.ckpt"
    zero_identity_checkpoint(ckpt)
    out = tmp_path / "denoised"
    assert (
        run_cli(
            "denoise", "--model", ckpt,
            "--manifest", workspace / "noisy" / "noisy_manifest.json",
            "--out", out,
        )
        == 0
    )
    noisy_manifests = load_manifests(workspace / "noisy" / "noisy_manifest.json")
    pred_manifests = load_manifests(out / "pred_manifest.json")
    for nm, pm in zip(noisy_manifests, pred_manifests):
        noisy = load_stack(nm, workspace / "noisy")
        pred = load_stack(pm, out)
        assert pred.planes.dtype == np.float32
        np.testing.assert_array_equal(
            pred.planes, noisy.planes.astype(np.float32)
        )


def test_denoise_post_process_applies_data_consistency(workspace, tmp_path):
    ckpt = tmp_path / "identity.ckpt"
    zero_identity_checkpoint(ckpt)
    out = tmp_path / "denoised_pp"
    assert (
        run_cli(
            "denoise", "--model", ckpt,
            "--manifest", workspace / "noisy" / "noisy_manifest.json",
            "--out", out, "--post-process",
        )
        == 0
    )
    post_manifests = load_manifests(out / "pred_post_manifest.json")
    pm = post_manifests[0]
    post = load_stack(pm, out)
    # recompute plane 0's data consistency from the stored artifacts
    sid = pm.id
    noisy_dir = workspace / "noisy"
    pred0 = read_array(out / "pred" / f"{sid}_p0000.npy")
    mask = read_array(noisy_dir / "masks" / f"{sid}_p0000.npy") != 0
    raw = read_array(noisy_dir / "spectra" / f"{sid}_p0000.real.npy") + 1j * read_array(
        noisy_dir / "spectra" / f"{sid}_p0000.imag.npy"
    )
    realization = NoiseRealization(
        noisy_image=np.zeros_like(pred0, dtype=np.float64),
        mask=mask,
        raw_spectrum=raw,
        lambda_used=0.0,
    )
    expected = data_consistency(pred0.astype(np.float64), realization)
    np.testing.assert_allclose(post.planes[0], expected, atol=1e-12)


def test_denoise_split_filter(workspace, tmp_path):
    ckpt = tmp_path / "identity.ckpt"
    zero_identity_checkpoint(ckpt)
    out = tmp_path / "test_only"
    run_cli(
        "denoise", "--model", ckpt,
        "--manifest", workspace / "noisy" / "noisy_manifest.json",
        "--out", out, "--split", "test",
    )
    assert len(load_manifests(out / "pred_manifest.json")) == 1


def test_denoise_missing_model_fails(workspace, tmp_path, capsys):
    rc = run_cli(
        "denoise", "--model", tmp_path / "nope.ckpt",
        "--manifest", workspace / "noisy" / "noisy_manifest.json",
        "--out", tmp_path / "x",
    )
    assert rc == 1
    assert "error:" in capsys.readouterr().err


# --- evaluate ------------------------------------------------------------------------


def test_evaluate_gt_against_itself(workspace, tmp_path, capsys):
    report = tmp_path / "self.csv"
    rc = run_cli(
        "evaluate", "--pred", workspace / "clean" / "clean_manifest.json",
        "--gt", workspace / "clean" / "clean_manifest.json",
        "--protocol", "raw", "--out", report,
    )
    assert rc == 0
    rows = report.read_text().strip().splitlines()
    assert rows[0] == "id,plane,psnr_db,ssim,nrmse"
    assert len(rows) == 1 + 3 * 6
    assert all("inf" in r for r in rows[1:])
    doc = json.loads((tmp_path / "self.json").read_text())
    assert doc["aggregate"]["ssim"]["mean"] == pytest.approx(1.0)


def test_evaluate_matches_library(workspace, tmp_path):
    from stackdenoise.metrics import MetricConfig, evaluate_stack

    report = tmp_path / "r.csv"
    run_cli(
        "evaluate", "--pred", workspace / "noisy" / "noisy_manifest.json",
        "--gt", workspace / "clean" / "clean_manifest.json",
        "--protocol", "raw", "--out", report,
    )
    clean_m = load_manifests(workspace / "clean" / "clean_manifest.json")
    noisy_m = load_manifests(workspace / "noisy" / "noisy_manifest.json")
    gt = [load_stack(m, workspace / "clean") for m in clean_m]
    pred = [load_stack(m, workspace / "noisy") for m in noisy_m]
    expected = evaluate_stack(gt, pred, MetricConfig(protocol="raw"))
    lines = report.read_text().strip().splitlines()[1:]
    got_psnr = [float(line.split(",")[2]) for line in lines]
    assert got_psnr == pytest.approx([r.psnr_db for r in expected.rows])


def test_evaluate_mismatched_ids_fail(workspace, tmp_path, capsys):
    sub = tmp_path / "subset"
    sub.mkdir()
    manifests = load_manifests(workspace / "clean" / "clean_manifest.json")
    from stackdenoise.dataio.manifest import save_manifests

    save_manifests(sub / "m.json", manifests[:2])
    shutil.copytree(workspace / "clean" / "clean", sub / "clean")
    rc = run_cli(
        "evaluate", "--pred", sub / "m.json",
        "--gt", workspace / "clean" / "clean_manifest.json",
        "--out", tmp_path / "r.csv",
    )
    assert rc == 1
    assert "different stacks" in capsys.readouterr().err


# --- baseline ------------------------------------------------------------------------


def test_baseline_direct_reproduces_noisy(workspace, tmp_path):
    out = tmp_path / "direct"
    assert (
        run_cli(
            "baseline", "--manifest", workspace / "noisy" / "noisy_manifest.json",
            "--mode", "direct", "--out", out,
        )
        == 0
    )
    noisy_m = load_manifests(workspace / "noisy" / "noisy_manifest.json")
    pred_m = load_manifests(out / "pred_manifest.json")
    for nm, pm in zip(noisy_m, pred_m):
        np.testing.assert_array_equal(
            load_stack(pm, out).planes, load_stack(nm, workspace / "noisy").planes
        )


def test_baseline_combine_requires_second_manifest(workspace, tmp_path, capsys):
    rc = run_cli(
        "baseline", "--manifest", workspace / "noisy" / "noisy_manifest.json",
        "--mode", "combine", "--out", tmp_path / "x",
    )
    assert rc == 1
    assert "manifest2" in capsys.readouterr().err


def test_baseline_combine_merges_two_copies(workspace, tmp_path):
    second = tmp_path / "noisy2"
    run_cli(
        "noise", "--manifest", workspace / "clean" / "clean_manifest.json",
        "--retain", 0.25, "--seed", 2, "--out", second,
    )
    out = tmp_path / "combined"
    assert (
        run_cli(
            "baseline", "--manifest", workspace / "noisy" / "noisy_manifest.json",
            "--mode", "combine", "--manifest2", second / "noisy_manifest.json",
            "--out", out,
        )
        == 0
    )
    # combining two independent copies must beat either copy alone
    clean_m = load_manifests(workspace / "clean" / "clean_manifest.json")
    pred_m = load_manifests(out / "pred_manifest.json")
    for cm, pm in zip(clean_m, pred_m):
        clean = load_stack(cm, workspace / "clean")
        merged = load_stack(pm, out)
        noisy = load_stack(
            load_manifests(workspace / "noisy" / "noisy_manifest.json")[0],
            workspace / "noisy",
        )
        if cm.id == noisy.id:
            err_single = float(np.mean((noisy.planes - clean.planes) ** 2))
            err_merged = float(np.mean((merged.planes - clean.planes) ** 2))
            assert err_merged < err_single


# --- neighbor-ssim ----------------------------------------------------------------------


def test_neighbor_ssim_report(workspace, tmp_path):
    report = tmp_path / "nss.json"
    rc = run_cli(
        "neighbor-ssim", "--manifest", workspace / "clean" / "clean_manifest.json",
        "--distant", 4, "--out", report,
    )
    assert rc == 0
    doc = json.loads(report.read_text())
    assert doc["distant_offset"] == 4
    assert 0.0 < doc["adjacent_ssim_mean_overall"] <= 1.0
    assert len(doc["stacks"]) == 3
    for entry in doc["stacks"].values():
        assert entry["adjacent_ssim_mean"] > entry["distant_ssim_mean"]


# --- train -------------------------------------------------------------------------------


def _train_config(workspace, out_dir, epochs=2, seed=0):
    return {
        "data": {
            "manifest": str(workspace / "noisy" / "noisy_manifest.json"),
            "dataset_kind": "synthetic",
        },
        "sampler": {"neighbors_per_side": 1, "mode": "self_supervised"},
        "train": {
            "epochs": epochs, "batch_size": 8, "lr0": 1e-3, "seed": seed,
            "augment": "none",
        },
        "model": {"variant": "microscopy", "n_in": 2, "width_scale": 0.25},
        "out_dir": str(out_dir),
    }


def write_config(tmp_path, cfg, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg, indent=1))
    return path


def test_train_end_to_end_artifacts(workspace, tmp_path):
    out = tmp_path / "run"
    cfg_path = write_config(tmp_path, _train_config(workspace, out))
    assert run_cli("train", "--config", cfg_path) == 0
    assert (out / "model.ckpt").exists()
    history = json.loads((out / "history.json").read_text())
    assert len(history) == 2
    assert {"epoch", "train_mse", "val_mse", "lr"} == set(history[0])
    echo = json.loads((out / "run_config.json").read_text())
    assert echo["model"]["n_in"] == 2
    assert echo["train"]["epochs"] == 2
    assert echo["sampler"]["mode"] == "self_supervised"


def test_train_reruns_identical(workspace, tmp_path):
    outs = []
    for sub in ("r1", "r2"):
        out = tmp_path / sub
        cfg_path = write_config(tmp_path, _train_config(workspace, out), f"{sub}.json")
        assert run_cli("train", "--config", cfg_path) == 0
        outs.append(out)
    assert (outs[0] / "history.json").read_bytes() == (outs[1] / "history.json").read_bytes()
    assert (outs[0] / "model.ckpt").read_bytes() == (outs[1] / "model.ckpt").read_bytes()


def test_train_flag_overrides_config(workspace, tmp_path):
    out = tmp_path / "short"
    cfg_path = write_config(tmp_path, _train_config(workspace, out, epochs=5))
    assert run_cli("train", "--config", cfg_path, "--epochs", 1) == 0
    history = json.loads((out / "history.json").read_text())
    assert len(history) == 1


def test_train_rejects_n_in_mismatch(workspace, tmp_path, capsys):
    cfg = _train_config(workspace, tmp_path / "x")
    cfg["model"]["n_in"] = 5
    cfg_path = write_config(tmp_path, cfg)
    assert run_cli("train", "--config", cfg_path) == 1
    assert "refuse to run" in capsys.readouterr().err


def test_train_rejects_unknown_config_keys(workspace, tmp_path, capsys):
    cfg = _train_config(workspace, tmp_path / "x")
    cfg["train"]["momentum"] = 0.9
    cfg_path = write_config(tmp_path, cfg)
    assert run_cli("train", "--config", cfg_path) == 1
    assert "momentum" in capsys.readouterr().err


def test_train_copy_mode_needs_target_manifest(workspace, tmp_path, capsys):
    cfg = _train_config(workspace, tmp_path / "x")
    cfg["sampler"] = {"neighbors_per_side": 0, "mode": "copy_supervised"}
    cfg["model"]["n_in"] = 1
    cfg_path = write_config(tmp_path, cfg)
    assert run_cli("train", "--config", cfg_path) == 1
    assert "target_manifest" in capsys.readouterr().err


def test_train_missing_manifest_fails(workspace, tmp_path, capsys):
    cfg = _train_config(workspace, tmp_path / "x")
    cfg["data"]["manifest"] = str(tmp_path / "absent.json")
    cfg_path = write_config(tmp_path, cfg)
    assert run_cli("train", "--config", cfg_path) == 1
    assert "does not exist" in capsys.readouterr().err
