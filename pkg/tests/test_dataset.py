import dataclasses

import numpy as np
import pytest

from stereo_evio import io
from stereo_evio.core import EventStream, Pose
from stereo_evio.dataset import (InitialState, InputContractError, SimulationConfig,
                                 config_from_mapping, load_dataset, parse_value, read_calibration,
                                 simulate, write_calibration, write_dataset)
from stereo_evio.imu import ImuBias
from stereo_evio.pipeline import PipelineConfig
from stereo_evio.sim import default_rig


def test_parse_value_follows_default_type():
    assert parse_value("yes", True) is True and parse_value("off", True) is False
    assert parse_value("7", 3) == 7 and parse_value("0.5", 1.0) == 0.5
    assert parse_value("1, 2 3", (0.0, 0.0, 0.0)) == (1.0, 2.0, 3.0)
    with pytest.raises(ValueError):
        parse_value("maybe", True)
    with pytest.raises(ValueError):
        parse_value("1 2", (0.0, 0.0, 0.0))


def test_unknown_and_invalid_keys_are_contract_errors():
    with pytest.raises(InputContractError, match="unknown config keys: colour"):
        config_from_mapping(PipelineConfig, {"colour": "red"})
    with pytest.raises(InputContractError):
        config_from_mapping(PipelineConfig, {"block_size": "fifteen"})
    with pytest.raises(InputContractError):
        config_from_mapping(PipelineConfig, {"block_size": "14"})


def test_overrides_take_precedence(tmp_path):
    (tmp_path / "c.txt").write_text("seed = 3\nbackend = false\n")
    cfg = PipelineConfig.from_file(tmp_path / "c.txt", seed=9)
    assert cfg.seed == 9 and cfg.backend is False
    assert SimulationConfig.from_file(None, duration=2.0).duration == 2.0


@pytest.mark.parametrize("field, value", [
    ("tracking_rate", 0.0), ("tracking_rate", 70.0), ("block_size", 14), ("window_size", 1),
    ("convergence_ratio", 1.0), ("max_depth", 0.1), ("surface_gradient", "central"), ("seed", -1)])
def test_pipeline_config_validation(field, value):
    with pytest.raises(ValueError):
        PipelineConfig(**{field: value})


@pytest.mark.parametrize("field, value", [
    ("duration", -1.0), ("width", 16), ("scene", "forest"), ("trajectory", "spiral"),
    ("imu_rate", 50.0), ("gyro_noise", -1.0), ("bootstrap_time", 20.0), ("contrast_threshold", 0.0)])
def test_simulation_config_validation(field, value):
    with pytest.raises(ValueError):
        SimulationConfig(**{field: value})


def test_calibration_round_trip(tmp_path):
    rig = default_rig()
    write_calibration(tmp_path / "calib.txt", rig)
    back = read_calibration(tmp_path / "calib.txt")
    assert back.left == rig.left and back.baseline == rig.baseline
    (tmp_path / "bad.txt").write_text("fx = 100\n")
    with pytest.raises(InputContractError):
        read_calibration(tmp_path / "bad.txt")


def test_initial_state_round_trip_and_defaults():
    s = InitialState(123, Pose([0.5, 0.5, 0.5, 0.5], [1, 2, 3]), np.array([0.1, 0, 0]),
                     ImuBias([0.01, 0, 0], [0, 0.002, 0]))
    text = {k: " ".join(map(repr, v)) if isinstance(v, list) else str(v)
            for k, v in s.to_mapping().items()}
    back = InitialState.from_mapping(text)
    assert back.t == 123
    np.testing.assert_allclose(back.pose.q, s.pose.q)
    np.testing.assert_allclose(back.bias.b_g, s.bias.b_g)
    minimal = InitialState.from_mapping({"t_us": "0", "position": "0 0 0",
                                         "orientation_wxyz": "1 0 0 0"})
    assert np.all(minimal.velocity == 0)
    with pytest.raises(InputContractError):
        InitialState.from_mapping({"position": "0 0 0", "orientation_wxyz": "1 0 0 0"})
    with pytest.raises(InputContractError):
        InitialState.from_mapping({"t_us": "0", "position": "0 0", "orientation_wxyz": "1 0 0 0"})


def test_zero_duration_simulation_writes_valid_empty_dataset(tmp_path):
    cfg = SimulationConfig(duration=0.0, bootstrap_time=0.0)
    ds = simulate(cfg)
    assert len(ds.events_left) == 0 and len(ds.imu) == 0
    out = write_dataset(tmp_path / "empty", ds, cfg)
    assert (out / "events_left.bin").read_bytes() == b"EVT1 346 260\n"
    assert (out / "imu.csv").read_text() == io.IMU_HEADER + "\n"
    back = load_dataset(out)
    assert len(back.events_right) == 0 and back.rig.width == 346


def test_dataset_round_trip(short_dataset_dir):
    ds = load_dataset(short_dataset_dir)
    assert len(ds.events_left) > 10_000 and len(ds.imu) == 1001
    t, poses = ds.groundtruth
    assert t[0] == 0 and t[-1] == 1_000_000 and len(poses) == 201
    assert ds.initial.t == 100_000
    scene = io.read_keyvalue(short_dataset_dir / "scene.txt")
    assert set(scene) == {f.name for f in dataclasses.fields(SimulationConfig)}
    assert ds.t_end == 1_000_000


def test_simulation_is_seed_deterministic():
    cfg = SimulationConfig(duration=0.1, bootstrap_time=0.05, width=64, height=48, seed=5)
    a, b = simulate(cfg), simulate(cfg)
    assert a.events_left.t.tobytes() == b.events_left.t.tobytes()
    np.testing.assert_array_equal(a.imu.accel, b.imu.accel)
    c = simulate(dataclasses.replace(cfg, seed=6))
    assert not np.array_equal(a.imu.accel, c.imu.accel)


def test_load_dataset_contract_errors(tmp_path, short_dataset_dir):
    with pytest.raises(InputContractError):
        load_dataset(tmp_path / "missing")
    ds = load_dataset(short_dataset_dir)
    out = write_dataset(tmp_path / "copy", ds)
    (out / "calib.txt").unlink()
    with pytest.raises(InputContractError, match="calib.txt"):
        load_dataset(out)
    out = write_dataset(tmp_path / "wrong_size", ds)
    io.write_events(out / "events_right.bin", EventStream.empty(10, 10))
    with pytest.raises(InputContractError):
        load_dataset(out)
    out = write_dataset(tmp_path / "bad_imu", ds)
    (out / "imu.csv").write_text("0,0,0,0,0,0,0\n0,0,0,0,0,0,0\n")
    with pytest.raises(InputContractError):
        load_dataset(out)


def test_events_only_dataset_loads_without_imu(tmp_path, short_dataset_dir):
    out = write_dataset(tmp_path / "events_only", load_dataset(short_dataset_dir))
    (out / "imu.csv").unlink()
    assert load_dataset(out).imu is None
