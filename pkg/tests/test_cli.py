import json
import subprocess
import sys

import numpy as np
import pytest

from demsr.cli import main
from demsr.network import ModelConfig, build, save_checkpoint
from demsr.raster_io import DemTile, read_asc, read_tile, write_asc


@pytest.fixture
def checkpoint(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(build(ModelConfig(m=4, n=2, T=2, scale=4), seed=0), path)
    return path


@pytest.fixture
def lr_tile(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "lr.asc"
    write_asc(DemTile(rng.uniform(800, 900, (10, 10)).astype(np.float32), cellsize=8.0), path)
    return path


def test_synth_byte_identical(tmp_path):
    for name in ("a.asc", "b.asc"):
        assert main(["synth", "--seed", "42", "--k", "5", "--roughness", "10", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a.asc").read_bytes() == (tmp_path / "b.asc").read_bytes()
    assert read_asc(tmp_path / "a.asc").shape == (33, 33)


def test_synth_many_bin(tmp_path):
    assert main(["synth", "--k", "4", "--count", "3", "--format", "bin", "--out", str(tmp_path / "d")]) == 0
    assert sorted(p.name for p in (tmp_path / "d").iterdir()) == ["synth_0.bin", "synth_1.bin", "synth_2.bin"]


def test_unknown_flag_exit_2(tmp_path, capsys):
    assert main(["synth", "--k", "3", "--bogus", "--out", str(tmp_path / "x.asc")]) == 2
    assert "usage" in capsys.readouterr().err


def test_bad_synth_spec_exit_2(tmp_path):
    assert main(["synth", "--k", "0", "--out", str(tmp_path / "x.asc")]) == 2


def test_prepare_train_infer_eval(tmp_path):
    hr = tmp_path / "hr"
    assert main(["synth", "--k", "5", "--count", "4", "--seed", "1", "--out", str(hr)]) == 0
    ds = tmp_path / "ds"
    assert main(["prepare", "--hr-dir", str(hr), "--scale", "4", "--split", "0.5,0.5", "--seed", "2",
                 "--crop", "32", "--out", str(ds)]) == 0
    assert (ds / "train.jsonl").is_file() and (ds / "val.jsonl").is_file()

    cfg = {
        "model": {"m": 4, "n": 2, "T": 2, "scale": 4},
        "train": {"batch_size": 2, "epochs": 2, "lr_milestones": [1], "seed": 0},
        "train_manifest": "ds/train.jsonl",
        "val_manifest": "ds/val.jsonl",
    }
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "run")]) == 0
    lines = (tmp_path / "run" / "report.jsonl").read_text().splitlines()
    assert len(lines) == 2

    lr_path = sorted((ds / "pairs").glob("*_lr.bin"))[0]
    stem = lr_path.stem[:-3]
    pred_dir, truth_dir = tmp_path / "pred", tmp_path / "truth"
    pred_dir.mkdir()
    truth_dir.mkdir()
    assert main(["infer", "--checkpoint", str(tmp_path / "run" / "last.ckpt"), "--in", str(lr_path),
                 "--patch", "16", "--out", str(pred_dir / f"{stem}.asc")]) == 0
    write_asc(read_tile(ds / "pairs" / f"{stem}_hr.bin"), truth_dir / f"{stem}.asc")
    bic_dir = tmp_path / "bicubic"
    bic_dir.mkdir()
    assert main(["upsample", "--in", str(lr_path), "--scale", "4", "--out", str(bic_dir / f"{stem}.asc")]) == 0
    assert main(["eval", "--pred", f"bicubic={bic_dir}", "--pred", f"dsrfo={pred_dir}", "--truth", str(truth_dir),
                 "--report", str(tmp_path / "rep.json"), "--error-dir", str(tmp_path / "err")]) == 0
    report = json.loads((tmp_path / "rep.json").read_text())
    assert [r["method"] for r in report] == ["bicubic", "dsrfo"]
    assert all(r["rmse"] > 0 and r["peak"] > 0 for r in report)
    assert (tmp_path / "err" / "dsrfo" / f"{stem}.ppm").is_file()


def test_infer_overlap0_matches_dsrfb(tmp_path, checkpoint, lr_tile):
    common = ["infer", "--checkpoint", str(checkpoint), "--in", str(lr_tile), "--patch", "20"]
    assert main(common + ["--mode", "dsrfo", "--overlap", "0", "--out", str(tmp_path / "a.asc")]) == 0
    assert main(common + ["--mode", "dsrfb", "--out", str(tmp_path / "b.asc")]) == 0
    assert (tmp_path / "a.asc").read_bytes() == (tmp_path / "b.asc").read_bytes()
    assert read_asc(tmp_path / "a.asc").shape == (40, 40)


def test_infer_idempotent(tmp_path, checkpoint, lr_tile):
    common = ["infer", "--checkpoint", str(checkpoint), "--in", str(lr_tile), "--patch", "20", "--ensemble", "mean"]
    main(common + ["--out", str(tmp_path / "a.bin")])
    main(common + ["--out", str(tmp_path / "b.bin")])
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_outputs_create_parent_dirs(tmp_path, checkpoint, lr_tile):
    sr = tmp_path / "a" / "b" / "sr.asc"
    bic = tmp_path / "c" / "bic.bin"
    assert main(["infer", "--checkpoint", str(checkpoint), "--in", str(lr_tile), "--patch", "20", "--out", str(sr)]) == 0
    assert main(["upsample", "--in", str(lr_tile), "--scale", "4", "--out", str(bic)]) == 0
    assert read_tile(sr).shape == read_tile(bic).shape == (40, 40)


def test_infer_missing_checkpoint_flag(tmp_path, lr_tile):
    out = tmp_path / "sr.asc"
    assert main(["infer", "--in", str(lr_tile), "--out", str(out)]) == 2
    assert not out.exists()


def test_infer_missing_checkpoint_file(tmp_path, lr_tile):
    out = tmp_path / "sr.asc"
    assert main(["infer", "--checkpoint", str(tmp_path / "nope.ckpt"), "--in", str(lr_tile), "--out", str(out)]) == 3
    assert not out.exists()


def test_infer_dsrfb_rejects_overlap(tmp_path, checkpoint, lr_tile):
    assert main(["infer", "--checkpoint", str(checkpoint), "--in", str(lr_tile), "--mode", "dsrfb",
                 "--overlap", "5", "--patch", "20", "--out", str(tmp_path / "x.asc")]) == 2


def test_bad_input_format_exit_3(tmp_path, checkpoint):
    bad = tmp_path / "bad.asc"
    bad.write_text("ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2 3\n")
    assert main(["infer", "--checkpoint", str(checkpoint), "--in", str(bad), "--out", str(tmp_path / "o.asc")]) == 3


def test_config_unknown_key_exit_2(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"model": {"m": 4, "nn": 2}, "train_manifest": "x.jsonl"}))
    assert main(["train", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "run")]) == 2
    (tmp_path / "cfg.json").write_text(json.dumps({"modle": {}, "train_manifest": "x.jsonl"}))
    assert main(["train", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "run")]) == 2


def test_numerical_abort_exit_4(tmp_path, capsys):
    hr = tmp_path / "hr"
    main(["synth", "--k", "5", "--count", "2", "--seed", "1", "--out", str(hr)])
    main(["prepare", "--hr-dir", str(hr), "--scale", "4", "--split", "1.0", "--out", str(tmp_path / "ds")])
    # an absurd learning rate drives the weights to inf within a few steps
    (tmp_path / "cfg.json").write_text(json.dumps({
        "model": {"m": 4, "n": 2, "T": 1, "scale": 4},
        "train": {"epochs": 5, "batch_size": 1, "lr_milestones": [], "base_lr": 1e30},
        "train_manifest": "ds/train.jsonl",
    }))
    assert main(["train", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "run")]) == 4
    assert "synth_" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    out = tmp_path / "t.asc"
    proc = subprocess.run([sys.executable, "-m", "demsr.cli", "synth", "--k", "3", "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert out.is_file()
