import numpy as np
import pytest

from keytrack import ScenarioConfig, default_skeleton
from keytrack.skeleton import Pose, SkeletonSpec


@pytest.fixture(scope="session")
def spec() -> SkeletonSpec:
    return default_skeleton()


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def make_pose(frame_index: int = 0, **coords) -> Pose:
    """Pose from keyword coordinates; pass None to mark a keypoint missing."""
    return Pose(coords=dict(coords), frame_index=frame_index)


@pytest.fixture()
def square_pose() -> Pose:
    # withers at origin, simple axis-aligned offsets (spine length 60)
    return make_pose(
        withers=(100.0, 100.0),
        tail_implant=(40.0, 100.0),
        head=(122.0, 100.0),
        nose=(138.0, 100.0),
        left_hip=(61.0, 114.0),
        right_hip=(61.0, 86.0),
    )


@pytest.fixture()
def quiet_scenario() -> ScenarioConfig:
    return ScenarioConfig(n_animals=2, seed=99, detection_noise=0.0, dropout=0.0)
