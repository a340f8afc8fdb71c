"""Cartesian path-following trajectory generation for redundant manipulators.

Pipeline: target paths and worlds (paths, world) feed a trajectory objective
(objective) optimized by a first-order solver (trajopt) from one of three
warm starts (initializers); the policy warm start is trained on the
path-conditioned MDP (mdp, policy). bench/cli wrap everything in a benchmark
harness.
"""

from .kinematics import RobotModel, default_model
from .objective import Trajectory
from .paths import Problem, TargetPath
from .se3 import Pose, Quat

__version__ = "0.1.0"

__all__ = [
    "Pose",
    "Quat",
    "Problem",
    "RobotModel",
    "TargetPath",
    "Trajectory",
    "default_model",
    "__version__",
]
