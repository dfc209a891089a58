import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rotation(rng, max_angle=np.pi):
    from stereo_evio.core import so3_exp
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0, max_angle))


def random_pose(rng, scale=2.0):
    from stereo_evio.core import Pose
    return Pose.from_matrix(random_rotation(rng), scale * rng.standard_normal(3))


@pytest.fixture(scope="session")
def short_dataset_dir(tmp_path_factory):
    """A one-second simulated dataset written to disk (shared by the pipeline and CLI tests)."""
    from stereo_evio.dataset import SimulationConfig, simulate, write_dataset
    cfg = SimulationConfig(duration=1.0)
    return write_dataset(tmp_path_factory.mktemp("data") / "short", simulate(cfg), cfg)
