"""On-disk dataset layout and the simulator front end that writes it.

A dataset directory holds::

    events_left.bin, events_right.bin   event streams
    imu.csv                             IMU samples (optional for reading, required to run)
    calib.txt                           rectified rig, key = value
    initial_state.txt                   bootstrap time, pose, velocity and biases
    groundtruth.txt                     TUM trajectory of the left camera (optional)
    scene.txt                           the simulation settings that produced it (optional)

The IMU body frame coincides with the left camera frame.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import io, sim
from .core import CameraIntrinsics, EventStream, Pose, StereoRig, US_PER_S
from .imu import GravityModel, ImuBias, ImuBuffer


class InputContractError(ValueError):
    """A dataset or config that the pipeline refuses to process."""


# --------------------------------------------------------------------------
# key = value parsing shared by the config dataclasses
# --------------------------------------------------------------------------

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_value(text, like):
    """Convert ``text`` to the type of the default value ``like``."""
    text = str(text).strip()
    if isinstance(like, bool):
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, tuple):
        vals = tuple(float(v) for v in text.replace(",", " ").split())
        if len(vals) != len(like):
            raise ValueError(f"expected {len(like)} numbers, got {len(vals)}")
        return vals
    return text


def config_from_mapping(cls, mapping, **overrides):
    """Build a frozen config dataclass from string values; unknown keys are errors."""
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - names)
    if unknown:
        raise InputContractError(f"unknown config keys: {', '.join(unknown)}")
    values = {}
    for key, text in mapping.items():
        try:
            values[key] = parse_value(text, getattr(defaults, key))
        except ValueError as exc:
            raise InputContractError(f"config key {key!r}: {exc}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**values)
    except ValueError as exc:
        raise InputContractError(str(exc)) from None


def config_to_mapping(cfg):
    return {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}


# --------------------------------------------------------------------------
# simulation settings
# --------------------------------------------------------------------------

SCENES = ("room", "bars", "plane")
TRAJECTORIES = ("room", "circle", "wobble", "static")


@dataclass(frozen=True)
class SimulationConfig:
    duration: float = 10.0
    width: int = 346
    height: int = 260
    hfov_deg: float = 75.0
    baseline: float = 0.12
    contrast_threshold: float = 0.2
    threshold_sigma: float = 0.0
    scene: str = "room"
    scene_depth: float = 3.0
    texture_period: float = 1.2
    scene_seed: int = 1
    trajectory: str = "room"
    trajectory_seed: int = 0
    imu_rate: float = 1000.0
    gyro_noise: float = 1e-3
    accel_noise: float = 1e-2
    gyro_bias: tuple = (0.004, -0.003, 0.005)
    accel_bias: tuple = (0.05, -0.03, 0.04)
    gyro_walk: float = 1e-4
    accel_walk: float = 1e-3
    bootstrap_time: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("duration must be non-negative")
        if self.width < 32 or self.height < 32:
            raise ValueError("sensor must be at least 32x32 px")
        if not 10.0 < self.hfov_deg < 170.0:
            raise ValueError("hfov_deg must lie in (10, 170)")
        if self.baseline <= 0 or self.contrast_threshold <= 0 or self.threshold_sigma < 0:
            raise ValueError("baseline and contrast threshold must be positive")
        if self.scene not in SCENES:
            raise ValueError(f"scene must be one of {SCENES}")
        if self.trajectory not in TRAJECTORIES:
            raise ValueError(f"trajectory must be one of {TRAJECTORIES}")
        if self.scene_depth <= 0 or self.texture_period <= 0:
            raise ValueError("scene depth and texture period must be positive")
        if self.imu_rate < 100:
            raise ValueError("imu_rate must be at least 100 Hz")
        if min(self.gyro_noise, self.accel_noise, self.gyro_walk, self.accel_walk) < 0:
            raise ValueError("noise densities must be non-negative")
        if not 0 <= self.bootstrap_time <= max(self.duration, 0.0):
            raise ValueError("bootstrap_time must lie inside the run")

    @classmethod
    def from_file(cls, path, **overrides):
        mapping = io.read_keyvalue(path) if path is not None else {}
        return config_from_mapping(cls, mapping, **overrides)

    def rig(self) -> StereoRig:
        return sim.default_rig(self.width, self.height, self.hfov_deg, self.baseline)

    def build_scene(self) -> sim.SceneModel:
        if self.scene == "room":
            return sim.room_scene(self.scene_depth, self.texture_period, self.scene_seed)
        if self.scene == "bars":
            return sim.bars_scene(depth=self.scene_depth)
        return sim.fronto_parallel_scene(self.scene_depth, "noise", self.texture_period)

    def build_trajectory(self) -> sim.TrajectoryModel:
        # the analytic models need a positive span even for empty runs
        d = max(self.duration, 1e-3)
        if self.trajectory == "room":
            return sim.room_trajectory(d, self.trajectory_seed)
        if self.trajectory == "circle":
            return sim.circle_trajectory(d)
        if self.trajectory == "wobble":
            return sim.wobble_trajectory(d, seed=self.trajectory_seed)
        return sim.static_trajectory(d)

    def noise_model(self) -> sim.ImuNoiseModel:
        return sim.ImuNoiseModel(self.gyro_noise, self.accel_noise,
                                 ImuBias(self.accel_bias, self.gyro_bias),
                                 self.gyro_walk, self.accel_walk)


# --------------------------------------------------------------------------
# dataset records
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class InitialState:
    t: int
    pose: Pose
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias: ImuBias = field(default_factory=ImuBias)

    def to_mapping(self):
        return {"t_us": self.t, "position": list(map(float, self.pose.p)),
                "orientation_wxyz": list(map(float, self.pose.q)),
                "velocity": list(map(float, self.velocity)),
                "accel_bias": list(map(float, self.bias.b_a)),
                "gyro_bias": list(map(float, self.bias.b_g))}

    @classmethod
    def from_mapping(cls, m):
        def vec(key, n, default=None):
            if key not in m:
                if default is None:
                    raise InputContractError(f"initial state lacks {key!r}")
                return np.asarray(default, dtype=float)
            vals = [float(v) for v in m[key].replace(",", " ").split()]
            if len(vals) != n:
                raise InputContractError(f"initial state {key!r} needs {n} numbers")
            return np.array(vals)

        if "t_us" not in m:
            raise InputContractError("initial state lacks 't_us'")
        pose = Pose(vec("orientation_wxyz", 4), vec("position", 3))
        return cls(int(m["t_us"]), pose, vec("velocity", 3, np.zeros(3)),
                   ImuBias(vec("accel_bias", 3, np.zeros(3)), vec("gyro_bias", 3, np.zeros(3))))


def write_calibration(path, rig: StereoRig):
    c = rig.left
    io.write_keyvalue(path, {"width": c.width, "height": c.height, "fx": repr(float(c.fx)),
                             "fy": repr(float(c.fy)), "cx": repr(float(c.cx)),
                             "cy": repr(float(c.cy)), "baseline": repr(float(rig.baseline))})


def read_calibration(path) -> StereoRig:
    m = io.read_keyvalue(path)
    try:
        cam = CameraIntrinsics(float(m["fx"]), float(m["fy"]), float(m["cx"]), float(m["cy"]),
                               int(m["width"]), int(m["height"]))
        return StereoRig.symmetric(cam, float(m["baseline"]))
    except KeyError as exc:
        raise InputContractError(f"{path}: missing calibration key {exc}") from None
    except ValueError as exc:
        raise InputContractError(f"{path}: {exc}") from None


@dataclass
class Dataset:
    rig: StereoRig
    events_left: EventStream
    events_right: EventStream
    imu: Optional[ImuBuffer]
    initial: InitialState
    groundtruth: Optional[tuple] = None  # (t_us array, list of Pose)
    path: Optional[Path] = None

    @property
    def t_end(self):
        ends = [int(s.t[-1]) for s in (self.events_left, self.events_right) if len(s)]
        if self.imu is not None and len(self.imu):
            ends.append(int(self.imu.t[-1]))
        return max(ends) if ends else self.initial.t


def load_dataset(path) -> Dataset:
    """Read a dataset directory; raises :class:`InputContractError` when it is malformed."""
    path = Path(path)
    if not path.is_dir():
        raise InputContractError(f"{path}: not a dataset directory")
    for name in ("events_left.bin", "events_right.bin", "calib.txt", "initial_state.txt"):
        if not (path / name).exists():
            raise InputContractError(f"{path}: missing {name}")
    rig = read_calibration(path / "calib.txt")
    try:
        left = io.read_events(path / "events_left.bin")
        right = io.read_events(path / "events_right.bin")
    except ValueError as exc:
        raise InputContractError(str(exc)) from None
    for s in (left, right):
        if (s.width, s.height) != (rig.width, rig.height):
            raise InputContractError("event stream size does not match the calibration")
    imu = None
    if (path / "imu.csv").exists():
        try:
            imu = ImuBuffer.from_samples(io.read_imu(path / "imu.csv"))
        except ValueError as exc:
            raise InputContractError(str(exc)) from None
    initial = InitialState.from_mapping(io.read_keyvalue(path / "initial_state.txt"))
    gt = io.read_tum(path / "groundtruth.txt") if (path / "groundtruth.txt").exists() else None
    return Dataset(rig, left, right, imu, initial, gt, path)


def write_dataset(path, ds: Dataset, settings: Optional[SimulationConfig] = None):
    path = io.ensure_dir(path)
    io.write_events(path / "events_left.bin", ds.events_left)
    io.write_events(path / "events_right.bin", ds.events_right)
    if ds.imu is not None:
        io.write_imu(path / "imu.csv", ds.imu.samples())
    write_calibration(path / "calib.txt", ds.rig)
    io.write_keyvalue(path / "initial_state.txt", ds.initial.to_mapping())
    if ds.groundtruth is not None:
        io.write_tum(path / "groundtruth.txt", *ds.groundtruth)
    if settings is not None:
        io.write_keyvalue(path / "scene.txt", config_to_mapping(settings))
    return path


# --------------------------------------------------------------------------
# simulation
# --------------------------------------------------------------------------

GROUNDTRUTH_RATE = 200.0


def simulate(cfg: SimulationConfig) -> Dataset:
    """Generate a complete dataset in memory from ``cfg``."""
    rig = cfg.rig()
    scene = cfg.build_scene()
    traj = cfg.build_trajectory()
    t_end = int(round(cfg.duration * US_PER_S))
    rng = np.random.default_rng(cfg.seed)
    ev_seed, imu_seed = (int(s) for s in rng.integers(2**31, size=2))
    if t_end > 0:
        left, right = sim.gen_events(scene, traj, rig, cfg.contrast_threshold, (0, t_end),
                                     seed=ev_seed, threshold_sigma=cfg.threshold_sigma)
        stream = sim.gen_imu(traj, cfg.noise_model(), GravityModel(), cfg.imu_rate, (0, t_end),
                             seed=imu_seed)
        imu = stream.buffer
        n_gt = int(np.floor(cfg.duration * GROUNDTRUTH_RATE + 1e-9)) + 1
        stamps = np.rint(np.arange(n_gt) * US_PER_S / GROUNDTRUTH_RATE).astype(np.int64)
        t0 = int(round(cfg.bootstrap_time * US_PER_S))
        bias = stream.true_bias(t0)
    else:
        left = right = EventStream.empty(rig.width, rig.height)
        imu = ImuBuffer(np.zeros(0, dtype=np.int64), np.zeros((0, 3)), np.zeros((0, 3)))
        stamps = np.zeros(0, dtype=np.int64)
        t0 = 0
        bias = ImuBias(cfg.accel_bias, cfg.gyro_bias)
    gt = (stamps, [traj.pose_us(int(t)) for t in stamps])
    initial = InitialState(t0, traj.pose_us(t0), traj.velocity(t0 / US_PER_S), bias)
    return Dataset(rig, left, right, imu, initial, gt)
