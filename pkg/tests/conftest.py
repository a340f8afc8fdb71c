import numpy as np
import pytest

from pathfollow.kinematics import RobotModel, default_model
from pathfollow.se3 import Pose, Quat


@pytest.fixture(scope="session")
def model() -> RobotModel:
    return default_model()


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def planar_model(n_joints: int = 2, link: float = 0.4) -> RobotModel:
    """Tiny planar arm (z-axis joints) for toy problems."""
    joints = []
    for i in range(n_joints):
        off = [0.3, 0.0, 0.3] if i == 0 else [link, 0.0, 0.0]
        joints.append(
            {
                "origin_p": off,
                "origin_q": [1, 0, 0, 0],
                "axis": [0, 0, 1],
                "q_min": -3.0,
                "q_max": 3.0,
                "v_max": 2.6,
            }
        )
    return RobotModel.from_dict(
        {
            "format": 1,
            "quaternion_order": "wxyz",
            "name": f"planar-{n_joints}",
            "joints": joints,
            "ee": {"p": [link, 0.0, 0.0], "q": [1, 0, 0, 0]},
            "spheres": [],
        }
    )


def random_pose(rng: np.random.Generator) -> Pose:
    from pathfollow.se3 import random_quat

    return Pose(rng.uniform(-1.0, 1.0, size=3), random_quat(rng))
