import shutil
import subprocess
import sys

import numpy as np
import pytest

from stereo_evio import io
from stereo_evio.cli import EXIT_CONTRACT, EXIT_ERROR, EXIT_OK, main
from stereo_evio.dataset import load_dataset


def test_simulate_zero_duration(tmp_path, capsys):
    cfg = tmp_path / "sim.txt"
    cfg.write_text("bootstrap_time = 0\nwidth = 64\nheight = 48\n")
    assert main(["simulate", str(tmp_path / "ds"), "--config", str(cfg), "--duration", "0"]) == EXIT_OK
    ds = load_dataset(tmp_path / "ds")
    assert len(ds.events_left) == 0 and ds.rig.width == 64
    assert "0 left / 0 right events" in capsys.readouterr().out


def test_simulate_is_deterministic(tmp_path):
    cfg = tmp_path / "sim.txt"
    cfg.write_text("width = 64\nheight = 48\nbootstrap_time = 0.02\n")
    for name in ("a", "b"):
        assert main(["simulate", str(tmp_path / name), "--config", str(cfg),
                     "--duration", "0.05", "--seed", "4"]) == EXIT_OK
    for f in ("events_left.bin", "events_right.bin", "imu.csv", "groundtruth.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_negative_seed_and_unknown_key_are_contract_errors(tmp_path, short_dataset_dir):
    assert main(["simulate", str(tmp_path / "x"), "--seed", "-1"]) == EXIT_CONTRACT
    cfg = tmp_path / "bad.txt"
    cfg.write_text("no_such_key = 1\n")
    assert main(["simulate", str(tmp_path / "x"), "--config", str(cfg)]) == EXIT_CONTRACT
    assert main(["run", str(short_dataset_dir), str(tmp_path / "o"), "--config", str(cfg)]) \
        == EXIT_CONTRACT


def test_run_refuses_events_only_dataset(tmp_path, short_dataset_dir, capsys):
    ds = tmp_path / "events_only"
    shutil.copytree(short_dataset_dir, ds)
    (ds / "imu.csv").unlink()
    assert main(["run", str(ds), str(tmp_path / "out")]) == EXIT_CONTRACT
    assert "IMU" in capsys.readouterr().err


def test_run_writes_trajectory_and_metrics(tmp_path, short_dataset_dir, capsys):
    out = tmp_path / "out"
    assert main(["run", str(short_dataset_dir), str(out), "--single-thread"]) == EXIT_OK
    stamps, poses = io.read_tum(out / "trajectory.txt")
    assert len(poses) == 91 and stamps[0] == 100_000
    assert (out / "metrics.csv").read_text().startswith("ate_m,")
    assert "ATE (m)" in capsys.readouterr().out


def test_eval_identical_and_mismatched(tmp_path, short_dataset_dir, capsys):
    gt = short_dataset_dir / "groundtruth.txt"
    assert main(["eval", str(gt), str(gt), "--output", str(tmp_path)]) == EXIT_OK
    header, row = (tmp_path / "metrics.csv").read_text().splitlines()
    assert np.allclose([float(v) for v in row.split(",")[:4]], 0, atol=1e-5)
    stamps, poses = io.read_tum(gt)
    io.write_tum(tmp_path / "later.txt", stamps + 100_000_000, poses)
    assert main(["eval", str(tmp_path / "later.txt"), str(gt)]) == EXIT_CONTRACT
    assert "cannot evaluate" in capsys.readouterr().err


def test_missing_file_is_io_error(tmp_path):
    assert main(["eval", str(tmp_path / "a.txt"), str(tmp_path / "b.txt")]) == EXIT_ERROR


def test_bench_requires_enough_repetitions(capsys):
    assert main(["bench", "zncc", "--reps", "10"]) == EXIT_ERROR
    assert "1000" in capsys.readouterr().err
    assert main(["bench", "zncc"]) == EXIT_OK
    assert "speedup" in capsys.readouterr().out


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "stereo_evio.cli", "run", "/nonexistent", "/tmp/x"],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_CONTRACT
    with pytest.raises(SystemExit):
        main(["--help"])
