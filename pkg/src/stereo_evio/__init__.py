"""Event-based stereo visual-inertial odometry and a synthetic stereo-event simulator."""
from .core import (CameraIntrinsics, Event, EventStream, MotionParams, Pose, StereoRig,
                   cayley_to_rotation, compose, inverse, rotation_to_cayley)
from .dataset import Dataset, InputContractError, SimulationConfig, load_dataset, simulate, write_dataset
from .pipeline import PipelineConfig, RunResult, TrackingFailure, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics", "Event", "EventStream", "MotionParams", "Pose", "StereoRig",
    "cayley_to_rotation", "compose", "inverse", "rotation_to_cayley",
    "Dataset", "InputContractError", "SimulationConfig", "load_dataset", "simulate", "write_dataset",
    "PipelineConfig", "RunResult", "TrackingFailure", "run_pipeline",
]
