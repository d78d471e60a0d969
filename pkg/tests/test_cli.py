import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from jacreg.cli import main
from jacreg.network import init_params, save_checkpoint
from jacreg.tensor import Rng

from conftest import DATA_DIR, needs_mnist

FAST_TRAIN = [
    "--epochs", "3", "--train-size", "120", "--batch-size", "60",
    "--hidden", "16", "16", "--log-every", "2",
]


@needs_mnist
def test_train_smoke(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["train", "--l2", "--effective-lambda", "0.01", "--seed", "7",
                 "--data-dir", str(DATA_DIR), "--out-dir", str(out)] + FAST_TRAIN)
    assert code == 0
    for name in ("model.jreg", "epochs.csv", "summary.json", "config.json"):
        assert (out / name).exists()
    summary = json.loads((out / "summary.json").read_text())
    assert 0.0 <= summary["test"]["accuracy"] <= 1.0
    echo = json.loads((out / "config.json").read_text())
    assert echo["effective_lambda"] == 0.01 and echo["seed"] == 7
    assert echo["epsilon"] == 0.5  # l2 default radius


def test_train_missing_data_exits_2(tmp_path, capsys):
    missing = tmp_path / "nowhere"
    code = main(["train", "--data-dir", str(missing), "--out-dir",
                 str(tmp_path / "run")] + FAST_TRAIN)
    assert code == 2
    err = capsys.readouterr().err
    assert "missing data path" in err and str(missing) in err


@needs_mnist
def test_data_dir_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("JACREG_DATA_DIR", str(DATA_DIR))
    monkeypatch.chdir(tmp_path)  # default relative data dir would not resolve
    out = tmp_path / "run"
    code = main(["train", "--out-dir", str(out)] + FAST_TRAIN)
    assert code == 0
    echo = json.loads((out / "config.json").read_text())
    assert echo["data_dir"] == str(DATA_DIR)


@needs_mnist
def test_train_unregularized_baseline(tmp_path):
    out = tmp_path / "run0"
    code = main(["train", "--l2", "--effective-lambda", "0", "--data-dir",
                 str(DATA_DIR), "--out-dir", str(out)] + FAST_TRAIN)
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    # no penalty: the surrogate IS the loss
    assert summary["train"]["surrogate"] == pytest.approx(
        summary["train"]["loss"], rel=1e-12)


@needs_mnist
def test_train_config_echo_reruns_identically(tmp_path):
    out1 = tmp_path / "a"
    assert main(["train", "--effective-lambda", "0.02", "--seed", "3",
                 "--data-dir", str(DATA_DIR), "--out-dir", str(out1),
                 "--threads", "1"] + FAST_TRAIN) == 0
    out2 = tmp_path / "b"
    assert main(["train", "--config", str(out1 / "config.json"),
                 "--out-dir", str(out2)]) == 0
    assert (out1 / "epochs.csv").read_bytes() == (out2 / "epochs.csv").read_bytes()
    assert (out1 / "model.jreg").read_bytes() == (out2 / "model.jreg").read_bytes()


@needs_mnist
def test_attack_epsilon_zero_matches_standard(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--data-dir", str(DATA_DIR), "--out-dir", str(out)]
                + FAST_TRAIN) == 0
    capsys.readouterr()
    atk_out = tmp_path / "atk"
    code = main(["attack", str(out / "model.jreg"), "--epsilon", "0",
                 "--data-dir", str(DATA_DIR), "--train-size", "120",
                 "--out-dir", str(atk_out)])
    assert code == 0
    results = json.loads((atk_out / "attack.json").read_text())
    for split in ("train", "test"):
        assert results[split]["robust_accuracy"] == pytest.approx(
            results[split]["accuracy"], abs=0)


@needs_mnist
def test_attack_linf_defaults(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--data-dir", str(DATA_DIR), "--out-dir", str(out)]
                + FAST_TRAIN) == 0
    capsys.readouterr()
    atk_out = tmp_path / "atk"
    code = main(["attack", str(out / "model.jreg"), "--linf", "--data-dir",
                 str(DATA_DIR), "--train-size", "120", "--out-dir", str(atk_out)])
    assert code == 0
    echo = json.loads((atk_out / "config.json").read_text())
    assert echo["epsilon"] == 0.03
    assert echo["steps"] == 20
    assert echo["step_size"] == 0.01


def test_attack_corrupt_checkpoint(tmp_path, capsys):
    bad = tmp_path / "bad.jreg"
    bad.write_bytes(b"JUNKJUNKJUNK")
    code = main(["attack", str(bad), "--data-dir", str(DATA_DIR)])
    assert code in (1, 2)  # 2 when the data dir is also missing
    if DATA_DIR.exists():
        assert code == 1
        assert "magic" in capsys.readouterr().err


def test_bounds_delta_validation(tmp_path, capsys):
    ckpt = tmp_path / "model.jreg"
    save_checkpoint(init_params((784, 8, 10), Rng(0)), ckpt)
    code = main(["bounds", str(ckpt), "--delta", "1.5", "--data-dir", str(DATA_DIR)])
    assert code == 2
    assert "delta" in capsys.readouterr().err


@needs_mnist
def test_bounds_zero_checkpoint_clean_error(tmp_path, capsys):
    ckpt = tmp_path / "zero.jreg"
    save_checkpoint(init_params((784, 16, 10), Rng(0), scale_rule="zero"), ckpt)
    code = main(["bounds", str(ckpt), "--data-dir", str(DATA_DIR),
                 "--train-size", "50", "--out-dir", str(tmp_path / "b")])
    assert code == 1
    err = capsys.readouterr().err
    assert "positive" in err  # DomainError surfaced cleanly


@needs_mnist
def test_bounds_report_row(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--data-dir", str(DATA_DIR), "--out-dir", str(out)]
                + FAST_TRAIN) == 0
    capsys.readouterr()
    bdir = tmp_path / "bounds"
    code = main(["bounds", str(out / "model.jreg"), "--data-dir", str(DATA_DIR),
                 "--train-size", "120", "--out-dir", str(bdir)])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "gap_bound_l2" in stdout and "vacuous_l2" in stdout
    lines = (bdir / "bounds.csv").read_text().splitlines()
    assert len(lines) == 2


def test_bad_config_value_is_usage_error(tmp_path, capsys):
    code = main(["train", "--momentum", "1.5", "--data-dir", str(DATA_DIR),
                 "--out-dir", str(tmp_path / "run")] + FAST_TRAIN)
    assert code == 2
    assert "momentum" in capsys.readouterr().err


def test_verify_passes_and_is_deterministic(capsys):
    assert main(["verify", "--seed", "5", "--nets", "20"]) == 0
    first = capsys.readouterr().out
    assert "FAIL" not in first and first.count("PASS") == 7
    assert main(["verify", "--seed", "5", "--nets", "20"]) == 0
    assert capsys.readouterr().out == first


def test_verify_negative_control(capsys):
    code = main(["verify", "--seed", "5", "--nets", "5", "--corrupt-jacobian"])
    assert code == 1
    out = capsys.readouterr().out
    assert "FAIL homogeneity_identity" in out


@needs_mnist
def test_reproduce_t1_fast(tmp_path):
    code = main(["reproduce", "t1", "--data-dir", str(DATA_DIR),
                 "--epochs", "2", "--train-size", "80", "--log-every", "2",
                 "--out-dir", str(tmp_path)])
    assert code == 0
    table_dir = tmp_path / "t1"
    md = (table_dir / "t1.md").read_text()
    assert "Effective Lambda" in md and "Robust" in md
    rows = (table_dir / "t1.csv").read_text().splitlines()
    assert rows[0].startswith("effective_lambda,jacobian_norm")
    assert len(rows) == 4  # header + one row per lambda
    for lam in ("0", "0.01", "0.1"):
        assert (table_dir / f"lam{lam}" / "model.jreg").exists()


@needs_mnist
def test_reproduce_fig1_fast(tmp_path):
    code = main(["reproduce", "fig1", "--data-dir", str(DATA_DIR),
                 "--epochs", "4", "--train-size", "100", "--log-every", "2",
                 "--out-dir", str(tmp_path)])
    assert code == 0
    curves = (tmp_path / "fig1" / "fig1_curves.csv").read_text().splitlines()
    assert curves[0] == "epoch,train_surrogate,robust_train_loss,test_surrogate,robust_test_loss"
    assert len(curves) == 3  # epochs 2 and 4 logged


@needs_mnist
def test_cmd_train_byte_identical_reruns_subprocess(tmp_path):
    """Determinism across processes with --threads 1 (acceptance criterion 11
    is asserted in test_acceptance; this is the fast smoke version)."""
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        cmd = [sys.executable, "-m", "jacreg.cli", "train", "--threads", "1",
               "--data-dir", str(DATA_DIR), "--out-dir", str(out),
               "--seed", "11"] + FAST_TRAIN
        proc = subprocess.run(cmd, capture_output=True, text=True,
                              cwd=str(Path(__file__).parent.parent))
        assert proc.returncode == 0, proc.stderr
        outs.append(out)
    assert (outs[0] / "model.jreg").read_bytes() == (outs[1] / "model.jreg").read_bytes()
    assert (outs[0] / "epochs.csv").read_bytes() == (outs[1] / "epochs.csv").read_bytes()
