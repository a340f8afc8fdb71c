"""Path-conditioned MDP: state construction, transition, rewards, episodes.

States bundle the configuration, link poses, a K-step lookahead of relative
target poses, and a 32-d scene feature; actions are configuration deltas
bounded to +/-0.26 rad. Rewards combine tracking, null-space-projected
imitation (when a demonstration is attached), and constraint penalties with
early termination on large tracking loss.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .kinematics import (
    RobotModel,
    jacobian,
    link_transforms,
    null_projector,
)
from .paths import Problem
from .se3 import rot6d_from_matrix
from .world import featurize, in_collision

ACTION_BOUND = 0.26  # rad per step
LOOKAHEAD = 6  # K future targets in the state
SCENE_DIM = 32


def state_dim(dof: int, lookahead: int = LOOKAHEAD, scene_dim: int = SCENE_DIM) -> int:
    return dof + 9 * (dof + 1) + 9 * lookahead + scene_dim


@dataclass(frozen=True)
class RewardWeights:
    """Reward shaping constants; the normalization weights must be non-negative."""

    w_pos: tuple = (2.0, 65.0, 30.0)
    w_rot: tuple = (2.0, 5.0, 0.0)
    w_im: tuple = (1.0, 15.0, 0.5)
    collision_penalty: float = -10.0
    joint_limit_penalty: float = -1.0
    singularity_penalty: float = -0.1
    termination_penalty: float = -3.0
    rot_gate: float = 0.05  # m; rotational reward active within this distance
    termination_dist: float = 0.20  # m; episode ends beyond this distance
    singularity_eps: float = 0.005  # on det(J J^T)
    gamma: float = 0.99

    def __post_init__(self):
        for w in (self.w_pos, self.w_rot, self.w_im):
            if len(w) != 3 or any(v < 0 for v in w):
                raise ValueError("normalization weights must be three non-negative values")


def normalize(e: float, w) -> float:
    """Error-to-reward shaping: w0 * exp(-w1 * e) - w2 * e^2."""
    return w[0] * math.exp(-w[1] * e) - w[2] * e * e


@dataclass(frozen=True, eq=False)
class MdpState:
    q: np.ndarray  # (d,)
    link_repr: np.ndarray  # (d+1, 9): position + 6D rotation per link
    target_repr: np.ndarray  # (K, 9): relative position + 6D relative rotation
    scene: np.ndarray  # (32,)

    def flatten(self) -> np.ndarray:
        return np.concatenate(
            [self.q, self.link_repr.reshape(-1), self.target_repr.reshape(-1), self.scene]
        )


def build_state(
    m: RobotModel,
    problem: Problem,
    q: np.ndarray,
    i: int,
    scene: np.ndarray | None = None,
    lookahead: int = LOOKAHEAD,
) -> MdpState:
    """State at step index i: everything is expressed in the base frame.

    Target row k holds the base-frame position difference to target
    min(i+1+k, N-1) and the 6D encoding of the relative rotation from the
    current end-effector orientation to that target.
    """
    path = problem.path
    n = len(path)
    if not 0 <= i < n:
        raise ValueError(f"step index {i} outside [0, {n})")
    q = np.asarray(q, dtype=float)
    R, p = link_transforms(m, q)
    d = m.dof
    link_repr = np.empty((d + 1, 9))
    for j in range(d + 1):
        link_repr[j, :3] = p[j]
        link_repr[j, 3:] = rot6d_from_matrix(R[j])
    ee_R, ee_p = R[-1], p[-1]
    target_repr = np.empty((lookahead, 9))
    for k in range(lookahead):
        idx = min(i + 1 + k, n - 1)
        target_repr[k, :3] = path.positions[idx] - ee_p
        target_repr[k, 3:] = rot6d_from_matrix(ee_R.T @ path.rotations[idx])
    if scene is None:
        scene = featurize(problem.world)
    return MdpState(q, link_repr, target_repr, np.asarray(scene, dtype=float))


def r_task(m: RobotModel, q: np.ndarray, x, weights: RewardWeights = RewardWeights()) -> float:
    """Tracking reward; the rotational part only counts within the 5 cm gate."""
    pos, rot = _task_terms_from_q(m, q, x, weights)
    return pos + rot


def _task_terms_from_q(m, q, x, weights):
    R, p = link_transforms(m, np.asarray(q, dtype=float))
    return _task_terms(R[-1], p[-1], x.orientation.to_matrix(), x.position, weights)


def _task_terms(ee_R, ee_p, x_R, x_p, weights):
    e_pos = float(np.linalg.norm(x_p - ee_p))
    tr = float(np.sum(ee_R * x_R))
    w_abs = 0.5 * math.sqrt(max(tr + 1.0, 0.0))
    e_rot = 2.0 * math.acos(min(1.0, w_abs))
    pos_term = normalize(e_pos, weights.w_pos)
    rot_term = normalize(e_rot, weights.w_rot) if e_pos <= weights.rot_gate else 0.0
    return pos_term, rot_term, e_pos


def r_imitation(m: RobotModel, q: np.ndarray, demo_q: np.ndarray,
                weights: RewardWeights = RewardWeights()) -> float:
    """Imitation reward on the null-space-projected configuration offset."""
    return normalize(imitation_error(m, q, demo_q), weights.w_im)


def imitation_error(m: RobotModel, q: np.ndarray, demo_q: np.ndarray) -> float:
    P = null_projector(jacobian(m, q))
    return float(np.linalg.norm(P @ (np.asarray(demo_q, dtype=float) - np.asarray(q, dtype=float))))


def r_imitation_l2(m: RobotModel, q: np.ndarray, demo_q: np.ndarray,
                   weights: RewardWeights = RewardWeights()) -> float:
    """Ablation variant: raw configuration distance, no null-space projection."""
    e = float(np.linalg.norm(np.asarray(demo_q, dtype=float) - np.asarray(q, dtype=float)))
    return normalize(e, weights.w_im)


def r_constraint(
    m: RobotModel,
    q_next: np.ndarray,
    q_prev: np.ndarray,
    sdf,
    x_i,
    weights: RewardWeights = RewardWeights(),
) -> tuple[float, dict, bool]:
    """Constraint penalties at the new configuration.

    Returns (reward, flag dict, terminate). Velocity needs no penalty here:
    the action bound already caps per-step motion at the velocity limit.
    """
    del q_prev  # transition is bounded; kept for signature symmetry
    q_next = np.asarray(q_next, dtype=float)
    flags = {"collision": False, "joint_limit": False, "singularity": False, "termination": False}
    total = 0.0
    if in_collision(m, q_next, sdf):
        flags["collision"] = True
        total += weights.collision_penalty
    if np.any(q_next < m.q_min) or np.any(q_next > m.q_max):
        flags["joint_limit"] = True
        total += weights.joint_limit_penalty
    J = jacobian(m, q_next)
    if float(np.linalg.det(J @ J.T)) < weights.singularity_eps:
        flags["singularity"] = True
        total += weights.singularity_penalty
    e_pos = float(np.linalg.norm(np.asarray(x_i.position) - _ee_position(m, q_next)))
    terminate = e_pos > weights.termination_dist
    if terminate:
        flags["termination"] = True
        total += weights.termination_penalty
    return total, flags, terminate


def _ee_position(m, q):
    _, p = link_transforms(m, q)
    return p[-1]


@dataclass(frozen=True, eq=False)
class StepOutcome:
    state: MdpState
    reward: float
    breakdown: dict  # name -> contribution; sums exactly to reward
    terminated: bool
    reason: str  # "" | "end_of_path" | "tracking_loss"
    step: int  # path index of the new state
    clamped: bool  # action exceeded the bound and was clipped

    def to_json(self) -> str:
        return json.dumps(
            {
                "step": self.step,
                "q": [float(v) for v in self.state.q],
                "reward": self.reward,
                "breakdown": {k: float(v) for k, v in self.breakdown.items()},
                "terminated": self.terminated,
                "reason": self.reason,
                "clamped": self.clamped,
            }
        )


class PathEnv:
    """Sequential trajectory-expansion environment over one problem.

    A single instance is not thread-safe; run one env per worker. The scene
    feature is computed once per episode (scenes are static).
    """

    def __init__(
        self,
        m: RobotModel,
        problem: Problem,
        weights: RewardWeights | None = None,
        demo: np.ndarray | None = None,
        terminate_early: bool = True,
    ):
        self.m = m
        self.problem = problem
        self.weights = weights or RewardWeights()
        if demo is not None:
            demo = np.asarray(demo, dtype=float)
            if demo.shape != (len(problem.path), m.dof):
                raise ValueError(
                    f"demo shape {demo.shape} does not match path length {len(problem.path)}"
                )
        self.demo = demo
        self.terminate_early = terminate_early
        self.scene = featurize(problem.world)
        self._sdf = problem.sdf
        self.reset()

    @property
    def n(self) -> int:
        return len(self.problem.path)

    def reset(self) -> MdpState:
        self.i = 0
        self.q = np.array(self.problem.q0, dtype=float)
        self.done = False
        return build_state(self.m, self.problem, self.q, 0, scene=self.scene)

    def step(self, action: np.ndarray) -> StepOutcome:
        if self.done:
            raise RuntimeError("episode finished; call reset()")
        a = np.asarray(action, dtype=float)
        clamped = bool(np.any(np.abs(a) > ACTION_BOUND))
        a = np.clip(a, -ACTION_BOUND, ACTION_BOUND)
        q_prev = self.q
        q_new = q_prev + a
        i_new = self.i + 1
        x = self.problem.path.pose(i_new)

        task_pos, task_rot, _ = _task_terms_from_q(self.m, q_new, x, self.weights)
        breakdown = {"task_pos": task_pos, "task_rot": task_rot}
        if self.demo is not None:
            breakdown["imitation"] = r_imitation(self.m, q_new, self.demo[i_new], self.weights)
        cstr, flags, hard_stop = r_constraint(
            self.m, q_new, q_prev, self._sdf, x, self.weights
        )
        w = self.weights
        breakdown["collision"] = w.collision_penalty if flags["collision"] else 0.0
        breakdown["joint_limit"] = w.joint_limit_penalty if flags["joint_limit"] else 0.0
        breakdown["singularity"] = w.singularity_penalty if flags["singularity"] else 0.0
        breakdown["termination"] = w.termination_penalty if flags["termination"] else 0.0
        reward = sum(breakdown.values())

        self.q = q_new
        self.i = i_new
        reason = ""
        if hard_stop and self.terminate_early:
            self.done = True
            reason = "tracking_loss"
        elif i_new == self.n - 1:
            self.done = True
            reason = "end_of_path"
        state = build_state(self.m, self.problem, q_new, i_new, scene=self.scene)
        return StepOutcome(state, reward, breakdown, self.done, reason, i_new, clamped)


def episode_return(env: PathEnv, policy, gamma: float = 0.99) -> float:
    """Discounted return of one rollout; deterministic for deterministic policies.

    `policy` is either a PolicyNet-like object with .act(state) or a callable
    state -> action.
    """
    act = policy.act if hasattr(policy, "act") else policy
    state = env.reset()
    total = 0.0
    disc = 1.0
    while not env.done:
        out = env.step(act(state))
        total += disc * out.reward
        disc *= gamma
        state = out.state
    return total


def write_episode_trace(outcomes, path) -> None:
    """One JSON StepOutcome per line."""
    with open(path, "w") as f:
        for o in outcomes:
            f.write(o.to_json() + "\n")
