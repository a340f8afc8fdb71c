"""Trajectory-optimization objective: pose tracking + obstacle clearance +
smoothness, with the analytic gradient and per-step constraint checks.

The total cost is pose + lam1 * obstacle + lam2 * smoothness with defaults
lam1 = 10 and lam2 = 5 / (N + 1). All functions are pure; per-step terms are
summed in a fixed order for reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .kinematics import (
    RobotModel,
    jacobian_batch,
    link_transforms_batch,
    sphere_centers_batch,
)
from .paths import TargetPath
from .se3 import ROTATION_WEIGHT, Quat, relative_angles
from .world import SDF, in_collision

DEFAULT_DT = 0.1  # s between consecutive configurations
DEFAULT_LAM1 = 10.0
CLEARANCE = 0.05  # m of desired obstacle clearance in the hinge cost
SINGULARITY_EPS = 0.005


def default_lam2(n: int) -> float:
    return 5.0 / (n + 1)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-uniform joint trajectory; configs[0] is the fixed start."""

    configs: np.ndarray  # (N, d)
    dt: float = DEFAULT_DT

    def __post_init__(self):
        c = np.asarray(self.configs, dtype=float)
        if c.ndim != 2:
            raise ValueError("configs must be (N, d)")
        if not np.all(np.isfinite(c)):
            raise ValueError("configs must be finite")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "configs", c)

    def __len__(self) -> int:
        return self.configs.shape[0]

    @property
    def dof(self) -> int:
        return self.configs.shape[1]

    def to_dict(self) -> dict:
        return {"format": 1, "dt": self.dt, "configs": [[float(v) for v in q] for q in self.configs]}

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        if d.get("format") != 1:
            raise ValueError(f"unsupported trajectory format: {d.get('format')!r}")
        return cls(np.array(d["configs"], dtype=float), float(d.get("dt", DEFAULT_DT)))


@dataclass(frozen=True)
class ObjectiveValue:
    total: float
    pose: float
    obs: float
    smooth: float
    lam1: float
    lam2: float

    @classmethod
    def compose(cls, pose: float, obs: float, smooth: float, lam1: float, lam2: float):
        return cls(pose + lam1 * obs + lam2 * smooth, pose, obs, smooth, lam1, lam2)


@dataclass(frozen=True, eq=False)
class ConstraintReport:
    """Per-step constraint flags.

    The headline violation rate counts collision and velocity-limit steps
    (the benchmark's constraint metric); `feasible` additionally requires
    joint limits. The singularity flag is a soft indicator (det(J J^T)
    below threshold), reported separately.
    """

    collision: np.ndarray  # (N,) bool
    joint_limit: np.ndarray
    velocity_limit: np.ndarray
    singularity: np.ndarray

    @cached_property
    def any_violation(self) -> np.ndarray:
        return self.collision | self.velocity_limit

    @property
    def violation_rate(self) -> float:
        return float(self.any_violation.mean())

    @property
    def feasible(self) -> bool:
        """No collision, joint-limit, or velocity-limit violation anywhere."""
        return not bool((self.collision | self.joint_limit | self.velocity_limit).any())

    @property
    def singularity_rate(self) -> float:
        return float(self.singularity.mean())


def _check_lengths(traj: Trajectory, path: TargetPath):
    if len(traj) != len(path):
        raise ValueError(f"trajectory length {len(traj)} != path length {len(path)}")


def pose_errors(m: RobotModel, traj: Trajectory, path: TargetPath):
    """Per-step positional (m) and rotational (rad) end-effector errors."""
    _check_lengths(traj, path)
    R, p = link_transforms_batch(m, traj.configs)
    e_pos = np.linalg.norm(p[:, -1] - path.positions, axis=1)
    e_rot = relative_angles(R[:, -1], path.rotations)
    return e_pos, e_rot


def u_pose(m: RobotModel, traj: Trajectory, path: TargetPath) -> float:
    """Summed pose-tracking error: e_pos + 0.17 * e_rot per step."""
    e_pos, e_rot = pose_errors(m, traj, path)
    return float(np.sum(e_pos + ROTATION_WEIGHT * e_rot))


def u_obs(m: RobotModel, traj: Trajectory, sdf: SDF, clearance: float = CLEARANCE) -> float:
    """Hinge clearance cost: sum over steps and spheres of
    max(0, clearance - (sdf(center) - radius))."""
    centers = sphere_centers_batch(m, traj.configs)
    dist = sdf.query(centers.reshape(-1, 3)).reshape(centers.shape[:2])
    margin = dist - m.sphere_radii[None, :]
    return float(np.sum(np.maximum(0.0, clearance - margin)))


def u_smooth(traj: Trajectory) -> float:
    """Half the summed squared joint velocities."""
    dq = np.diff(traj.configs, axis=0) / traj.dt
    return 0.5 * float(np.sum(dq * dq))


def u_total(
    m: RobotModel,
    traj: Trajectory,
    path: TargetPath,
    sdf: SDF,
    lam1: float = DEFAULT_LAM1,
    lam2: float | None = None,
) -> ObjectiveValue:
    lam2 = default_lam2(len(traj)) if lam2 is None else lam2
    return ObjectiveValue.compose(
        u_pose(m, traj, path), u_obs(m, traj, sdf), u_smooth(traj), lam1, lam2
    )


def grad_u(
    m: RobotModel,
    traj: Trajectory,
    path: TargetPath,
    sdf: SDF,
    lam1: float = DEFAULT_LAM1,
    lam2: float | None = None,
) -> np.ndarray:
    """Analytic gradient (N, d) of the total objective; row 0 is zero because
    the start configuration is fixed.

    Pose term: Jacobian-transpose on the unit position error plus the
    rotation axis of the relative end-effector rotation. Obstacle term:
    central-difference SDF spatial gradient pulled back through each sphere
    center's position Jacobian. Smoothness: discrete second difference.
    """
    lam2 = default_lam2(len(traj)) if lam2 is None else lam2
    Q = traj.configs
    n, d = Q.shape
    R, p = link_transforms_batch(m, Q)
    J = jacobian_batch(m, Q, R, p)
    grad = np.zeros((n, d))

    # pose term
    dp = p[:, -1] - path.positions
    e_pos = np.linalg.norm(dp, axis=1)
    r_rel = R[:, -1] @ np.transpose(path.rotations, (0, 2, 1))  # current * target^T
    vx = r_rel[:, 2, 1] - r_rel[:, 1, 2]
    vy = r_rel[:, 0, 2] - r_rel[:, 2, 0]
    vz = r_rel[:, 1, 0] - r_rel[:, 0, 1]
    v = 0.5 * np.stack([vx, vy, vz], axis=1)  # = sin(theta) * axis
    vn = np.linalg.norm(v, axis=1)
    trace = np.einsum("nii->n", r_rel)
    for i in range(n):
        g = np.zeros(d)
        if e_pos[i] > 1e-12:
            g += J[i, :3].T @ (dp[i] / e_pos[i])
        if trace[i] < 0.0:
            # angle beyond 2pi/3: sin(theta) is small, recover the axis from
            # the quaternion instead of the skew part
            axis, angle = Quat.from_matrix(r_rel[i]).axis_angle()
            if angle > 1e-12:
                g += ROTATION_WEIGHT * (J[i, 3:].T @ axis)
        elif vn[i] > 1e-12:
            g += ROTATION_WEIGHT * (J[i, 3:].T @ (v[i] / vn[i]))
        grad[i] += g

    # obstacle term
    centers = sphere_centers_batch(m, Q, R, p)
    dist = sdf.query(centers.reshape(-1, 3)).reshape(n, -1)
    active = (dist - m.sphere_radii[None, :]) < CLEARANCE
    if active.any():
        h = 0.25 * sdf.resolution
        rows, spheres = np.nonzero(active)
        c_act = centers[rows, spheres]  # (P, 3)
        offsets = np.zeros((6, 3))
        offsets[0, 0] = h
        offsets[1, 0] = -h
        offsets[2, 1] = h
        offsets[3, 1] = -h
        offsets[4, 2] = h
        offsets[5, 2] = -h
        probes = c_act[:, None, :] + offsets[None, :, :]
        vals = sdf.query(probes.reshape(-1, 3)).reshape(-1, 6)
        grad_sdf = np.stack(
            [vals[:, 0] - vals[:, 1], vals[:, 2] - vals[:, 3], vals[:, 4] - vals[:, 5]],
            axis=1,
        ) / (2.0 * h)
        for k in range(len(rows)):
            i, s = int(rows[k]), int(spheres[k])
            link = int(m.sphere_links[s])
            Jp = np.zeros((3, d))
            for j in range(link + 1):
                z = R[i, j] @ m._axes[j]
                Jp[:, j] = np.cross(z, c_act[k] - p[i, j])
            grad[i] -= lam1 * (Jp.T @ grad_sdf[k])

    # smoothness term: d/dq_i of 0.5 * sum ||(q_{k+1}-q_k)/dt||^2
    inv_dt2 = 1.0 / (traj.dt * traj.dt)
    sm = np.zeros((n, d))
    diff = np.diff(Q, axis=0)
    sm[:-1] -= diff
    sm[1:] += diff
    grad += lam2 * inv_dt2 * sm

    grad[0] = 0.0  # start configuration is fixed
    return grad


def check_constraints(m: RobotModel, traj: Trajectory, sdf: SDF) -> ConstraintReport:
    """Per-step collision, joint-limit, velocity-limit, and singularity flags.

    The velocity flag at step i refers to the transition to step i+1 and is
    False at the final step.
    """
    Q = traj.configs
    n = Q.shape[0]
    R, p = link_transforms_batch(m, Q)
    J = jacobian_batch(m, Q, R, p)

    collision = np.array([in_collision(m, Q[i], sdf) for i in range(n)])
    joint_limit = np.any((Q < m.q_min) | (Q > m.q_max), axis=1)
    velocity = np.zeros(n, dtype=bool)
    if n > 1:
        rates = np.abs(np.diff(Q, axis=0)) / traj.dt
        velocity[:-1] = np.any(rates > m.v_max[None, :], axis=1)
    jjt = J @ np.transpose(J, (0, 2, 1))
    singularity = np.linalg.det(jjt) < SINGULARITY_EPS
    return ConstraintReport(collision, joint_limit, velocity, singularity)
