"""End-to-end CLI runs against temp directories, via main(argv)."""

import json

import numpy as np
import pytest

from diffrestore import ImageTensor, BinaryMask, ParsingMap
from diffrestore import tensors
from diffrestore.cli import main


def quantized_image(rng, c, h, w):
    return ImageTensor(2.0 * rng.integers(0, 256, size=(c, h, w)) / 255.0 - 1.0)


def make_scene(tmp_path, rng, h=12, w=12, T=15):
    """Write image/mask/parsing/backend files plus a run config."""
    img = quantized_image(rng, 3, h, w)
    tensors.save_image(img, tmp_path / "input.png")

    m = np.zeros((h, w), dtype=np.uint8)
    m[h // 2, 2 : w - 2] = 1
    tensors.save_mask(BinaryMask(m), tmp_path / "mask.png")

    codes = np.full((h, w), 1, dtype=np.uint8)
    codes[:3, :] = 17
    codes[h - 2 :, :3] = 4
    tensors.save_parsing(ParsingMap(codes), tmp_path / "parsing.png")

    tensors.write_ssdt(np.zeros((3, h, w)), tmp_path / "mean.ssdt")
    tensors.write_ssdt(np.ones((3, h, w)), tmp_path / "var.ssdt")

    cfg = {
        "seed": 5,
        "schedule": {"T": T, "beta_start": 1e-3, "beta_end": 0.1},
        "guidance": {"dilation_radius": 1},
        "inputs": {
            "image": str(tmp_path / "input.png"),
            "mask": str(tmp_path / "mask.png"),
            "parsing": str(tmp_path / "parsing.png"),
        },
        "backend": {
            "kind": "gaussian",
            "mean": str(tmp_path / "mean.ssdt"),
            "var": str(tmp_path / "var.ssdt"),
        },
        "output_dir": str(tmp_path / "out"),
    }
    return cfg


def write_cfg(tmp_path, cfg, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


# ---------------------------------------------------------------------------
# restore


def test_restore_end_to_end(tmp_path):
    rng = np.random.default_rng(0)
    cfg = make_scene(tmp_path, rng)
    code = main(["restore", "--config", write_cfg(tmp_path, cfg)])
    assert code == 0
    out = tmp_path / "out"
    assert (out / "restored.png").is_file()
    assert (out / "restored.ssdt").is_file()
    trace = (out / "trace.txt").read_text()
    assert "# seed = 5" in trace
    assert "# backend = gaussian" in trace
    # header lines + column header + one row per step
    rows = [ln for ln in trace.strip().split("\n") if not ln.startswith("#")]
    assert len(rows) == 1 + 15
    restored = tensors.load_tensor(out / "restored.ssdt")
    assert restored.shape == (3, 12, 12)


def test_restore_byte_deterministic(tmp_path):
    rng = np.random.default_rng(1)
    cfg = make_scene(tmp_path, rng)
    cfg_path = write_cfg(tmp_path, cfg)
    assert main(["restore", "--config", cfg_path, "--output-dir", str(tmp_path / "a")]) == 0
    assert main(["restore", "--config", cfg_path, "--output-dir", str(tmp_path / "b")]) == 0
    for name in ("restored.ssdt", "trace.txt", "restored.png"):
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes()
        assert a == b, name


def test_restore_seed_flag_overrides(tmp_path):
    rng = np.random.default_rng(2)
    cfg = make_scene(tmp_path, rng)
    cfg_path = write_cfg(tmp_path, cfg)
    assert main(["restore", "--config", cfg_path, "--output-dir", str(tmp_path / "a")]) == 0
    assert main(["restore", "--config", cfg_path, "--output-dir", str(tmp_path / "b"),
                 "--seed", "99"]) == 0
    a = (tmp_path / "a" / "restored.ssdt").read_bytes()
    b = (tmp_path / "b" / "restored.ssdt").read_bytes()
    assert a != b
    assert "# seed = 99" in (tmp_path / "b" / "trace.txt").read_text()


def test_restore_missing_mask_file(tmp_path, capsys):
    rng = np.random.default_rng(3)
    cfg = make_scene(tmp_path, rng)
    cfg["inputs"]["mask"] = str(tmp_path / "nope.png")
    code = main(["restore", "--config", write_cfg(tmp_path, cfg)])
    assert code == 1
    err = capsys.readouterr().err
    assert "inputs.mask" in err and "nope.png" in err


def test_restore_requires_mask_key(tmp_path, capsys):
    rng = np.random.default_rng(4)
    cfg = make_scene(tmp_path, rng)
    del cfg["inputs"]["mask"]
    code = main(["restore", "--config", write_cfg(tmp_path, cfg)])
    assert code == 1
    assert "inputs.mask" in capsys.readouterr().err


def test_restore_with_reference(tmp_path):
    rng = np.random.default_rng(5)
    cfg = make_scene(tmp_path, rng)
    ref = quantized_image(rng, 3, 12, 12)
    tensors.save_image(ref, tmp_path / "ref.png")
    cfg["inputs"]["restored"] = str(tmp_path / "ref.png")
    assert main(["restore", "--config", write_cfg(tmp_path, cfg)]) == 0


def test_restore_snapshots(tmp_path):
    rng = np.random.default_rng(6)
    cfg = make_scene(tmp_path, rng)
    cfg["guidance"]["snapshot_every"] = 10
    assert main(["restore", "--config", write_cfg(tmp_path, cfg)]) == 0
    snaps = sorted((tmp_path / "out" / "snapshots").iterdir())
    assert [s.name for s in snaps] == ["snap_00001.ssdt", "snap_00010.ssdt"]


def test_restore_gmm_backend(tmp_path):
    rng = np.random.default_rng(7)
    cfg = make_scene(tmp_path, rng)
    tensors.write_ssdt(np.full((3, 12, 12), 0.3), tmp_path / "mean2.ssdt")
    cfg["backend"] = {
        "kind": "gmm",
        "components": [
            {"weight": 0.5, "mean": str(tmp_path / "mean.ssdt"), "var": str(tmp_path / "var.ssdt")},
            {"weight": 0.5, "mean": str(tmp_path / "mean2.ssdt"), "var": str(tmp_path / "var.ssdt")},
        ],
    }
    assert main(["restore", "--config", write_cfg(tmp_path, cfg)]) == 0


# ---------------------------------------------------------------------------
# pseudo-label


def test_pseudo_label_outputs(tmp_path):
    rng = np.random.default_rng(8)
    cfg = make_scene(tmp_path, rng)
    assert main(["pseudo-label", "--config", write_cfg(tmp_path, cfg)]) == 0
    out = tmp_path / "out"
    for name in ("yp.png", "yp.ssdt", "trace.txt", "metrics.txt"):
        assert (out / name).is_file(), name
    metrics = (out / "metrics.txt").read_text()
    assert metrics.splitlines()[0].split() == [
        "input", "contour_iou", "feature_iou", "sat_w1", "edge_var", "mse", "psnr",
    ]
    trace = (out / "trace.txt").read_text()
    rows = [ln for ln in trace.strip().split("\n") if not ln.startswith("#")]
    assert len(rows) == 1 + 15


# ---------------------------------------------------------------------------
# config validation


def test_missing_required_image(tmp_path, capsys):
    rng = np.random.default_rng(9)
    cfg = make_scene(tmp_path, rng)
    del cfg["inputs"]["image"]
    assert main(["restore", "--config", write_cfg(tmp_path, cfg)]) == 1
    assert "inputs.image" in capsys.readouterr().err


def test_bad_backend_kind(tmp_path, capsys):
    rng = np.random.default_rng(10)
    cfg = make_scene(tmp_path, rng)
    cfg["backend"] = {"kind": "oracle"}
    assert main(["restore", "--config", write_cfg(tmp_path, cfg)]) == 1
    assert "backend.kind" in capsys.readouterr().err


def test_invalid_json_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    assert main(["restore", "--config", str(bad)]) == 1
    assert "invalid JSON" in capsys.readouterr().err


def test_wrong_type_field(tmp_path, capsys):
    rng = np.random.default_rng(11)
    cfg = make_scene(tmp_path, rng)
    cfg["schedule"]["T"] = "many"
    assert main(["restore", "--config", write_cfg(tmp_path, cfg)]) == 1
    assert "schedule.T" in capsys.readouterr().err


def test_negative_variance_model(tmp_path, capsys):
    rng = np.random.default_rng(12)
    cfg = make_scene(tmp_path, rng)
    tensors.write_ssdt(np.full((3, 12, 12), -1.0), tmp_path / "var.ssdt")
    assert main(["restore", "--config", write_cfg(tmp_path, cfg)]) == 1
    assert "backend" in capsys.readouterr().err


def test_nonfinite_model_file(tmp_path, capsys):
    rng = np.random.default_rng(13)
    cfg = make_scene(tmp_path, rng)
    tensors.write_ssdt(np.full((3, 12, 12), np.nan), tmp_path / "mean.ssdt")
    assert main(["restore", "--config", write_cfg(tmp_path, cfg)]) == 2
    assert "non-finite" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# metrics command


def test_metrics_identical_pair(tmp_path, capsys):
    rng = np.random.default_rng(14)
    img = quantized_image(rng, 3, 8, 8)
    tensors.save_image(img, tmp_path / "a.png")
    codes = np.full((8, 8), 1, dtype=np.uint8)
    tensors.save_parsing(ParsingMap(codes), tmp_path / "p.png")
    code = main([
        "metrics",
        "--pair", f"{tmp_path / 'a.png'},{tmp_path / 'p.png'}",
        "--ref", str(tmp_path / "a.png"),
        "--ref-parsing", str(tmp_path / "p.png"),
    ])
    assert code == 0
    out = capsys.readouterr().out
    row = out.strip().split("\n")[-1].split()
    by_col = dict(zip(
        ["input", "contour_iou", "feature_iou", "sat_w1", "edge_var", "mse", "psnr"], row))
    assert float(by_col["contour_iou"]) == 1.0
    assert float(by_col["feature_iou"]) == 1.0
    assert float(by_col["sat_w1"]) == 0.0
    assert float(by_col["mse"]) == 0.0
    assert by_col["psnr"] == "inf"


def test_metrics_out_file_and_hist(tmp_path):
    rng = np.random.default_rng(15)
    from diffrestore import saturation_histogram, write_histogram

    img = quantized_image(rng, 3, 8, 8)
    other = quantized_image(rng, 3, 8, 8)
    tensors.save_image(img, tmp_path / "a.png")
    tensors.save_image(other, tmp_path / "b.png")
    write_histogram(saturation_histogram(other), tmp_path / "ref.ssh1")
    out_path = tmp_path / "table.txt"
    code = main([
        "metrics", "--pair", str(tmp_path / "a.png"),
        "--ref-hist", str(tmp_path / "ref.ssh1"),
        "--out", str(out_path),
    ])
    assert code == 0
    text = out_path.read_text()
    assert text.splitlines()[0].startswith("input")
    assert "a.png" in text


def test_metrics_no_pairs_empty_table(tmp_path, capsys):
    assert main(["metrics"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].split()[0] == "input"


# ---------------------------------------------------------------------------
# sweep command


def test_sweep_end_to_end(tmp_path, capsys):
    rng = np.random.default_rng(16)
    cfg = make_scene(tmp_path, rng, T=10)
    grid_path = tmp_path / "grid.json"
    grid_path.write_text(json.dumps({"s_s": [0.0, 0.0035]}))
    code = main(["sweep", "--config", write_cfg(tmp_path, cfg), "--grid", str(grid_path)])
    assert code == 0
    table = (tmp_path / "out" / "sweep.txt").read_text()
    rows = [ln for ln in table.strip().split("\n") if not ln.startswith("#")]
    assert rows[0].split() == ["input", "s_w", "s_s", "T1", "mse", "psnr", "edge_var"]
    assert len(rows) == 1 + 2
    assert capsys.readouterr().out == table


def test_sweep_bad_grid_key(tmp_path, capsys):
    rng = np.random.default_rng(17)
    cfg = make_scene(tmp_path, rng, T=10)
    grid_path = tmp_path / "grid.json"
    grid_path.write_text(json.dumps({"volume": [11]}))
    assert main(["sweep", "--config", write_cfg(tmp_path, cfg), "--grid", str(grid_path)]) == 1
    assert "volume" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# selftest command


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "properties passed" in out
    assert "FAIL" not in out


def test_selftest_corrupt_hook_fails(capsys):
    assert main(["selftest", "--corrupt", "l1-grad-sign"]) == 5
    out = capsys.readouterr().out
    assert "FAIL grad-l1-fd" in out
