"""Initial-trajectory generators: linear interpolation, greedy segment-wise
IK selection, and deterministic policy rollout.

Every initializer pins configs[0] to the problem's start configuration and
reports its wall-clock generation time.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .kinematics import RobotModel, ik_sample
from .mdp import ACTION_BOUND, PathEnv
from .objective import Trajectory, u_total
from .paths import Problem
from .policy import LayoutMismatch, PolicyNet

GREEDY_STRIDE = 10  # path sub-sampling interval
GREEDY_CANDIDATES = 100  # IK solutions scored per segment
LINEAR_GOAL_CANDIDATES = 100


@dataclass(frozen=True, eq=False)
class InitResult:
    trajectory: Trajectory
    gen_time: float  # seconds, monotonic clock
    method: str
    flags: tuple = ()


def _segment_path(path, a: int, b: int):
    """View of path poses a..b inclusive, bypassing construction checks."""
    sub = object.__new__(type(path))
    object.__setattr__(sub, "positions", path.positions[a:b + 1])
    object.__setattr__(sub, "quats", path.quats[a:b + 1])
    object.__setattr__(sub, "name", path.name)
    object.__setattr__(sub, "seed", path.seed)
    object.__setattr__(sub, "has_obstacles", path.has_obstacles)
    return sub


def _interp(q_a: np.ndarray, q_b: np.ndarray, steps: int) -> np.ndarray:
    """Linear interpolation over `steps` configs, endpoints included."""
    t = np.linspace(0.0, 1.0, steps)[:, None]
    return q_a[None, :] * (1.0 - t) + q_b[None, :] * t


def linear_init(m: RobotModel, problem: Problem,
                rng: np.random.Generator | None = None, dt: float = 0.1) -> InitResult:
    """Straight line in configuration space from q0 to a goal IK solution.

    The goal is chosen among sampled IK solutions at the last pose: prefer
    collision-free ones, then minimal distance to q0. With no IK solution at
    all, the trajectory stays at q0 (flagged "no_goal_ik").
    """
    t0 = time.monotonic()
    rng = np.random.default_rng() if rng is None else rng
    n = problem.n
    flags = ()
    sols = ik_sample(m, problem.path.pose(n - 1), LINEAR_GOAL_CANDIDATES, rng=rng)
    if not sols:
        q_goal = problem.q0
        flags = ("no_goal_ik",)
    else:
        from .world import in_collision

        free = [q for q in sols if not in_collision(m, q, problem.sdf)]
        pool = free if free else sols
        dists = [np.linalg.norm(q - problem.q0) for q in pool]
        q_goal = pool[int(np.argmin(dists))]
    configs = _interp(problem.q0, q_goal, n)
    configs[0] = problem.q0
    return InitResult(Trajectory(configs, dt), time.monotonic() - t0, "linear", flags)


def greedy_init(
    m: RobotModel,
    problem: Problem,
    rng: np.random.Generator | None = None,
    dt: float = 0.1,
    stride: int = GREEDY_STRIDE,
    candidates: int = GREEDY_CANDIDATES,
) -> InitResult:
    """Segment-wise greedy IK selection.

    Sub-samples the path every `stride` poses (always including the last),
    scores `candidates` random IK solutions per segment by the trajectory
    objective restricted to that segment, and linearly interpolates to the
    winner. Segments with no IK solution carry the anchor forward (flagged
    "segment_no_ik").
    """
    t0 = time.monotonic()
    rng = np.random.default_rng() if rng is None else rng
    path = problem.path
    n = problem.n
    anchors_idx = list(range(0, n, stride))
    if anchors_idx[-1] != n - 1:
        anchors_idx.append(n - 1)

    lam2_full = 5.0 / (n + 1)
    configs = np.empty((n, m.dof))
    configs[0] = problem.q0
    q_anchor = problem.q0
    flags: list[str] = []
    for a, b in zip(anchors_idx, anchors_idx[1:]):
        steps = b - a + 1
        sols = ik_sample(m, path.pose(b), candidates, rng=rng)
        if not sols:
            if "segment_no_ik" not in flags:
                flags.append("segment_no_ik")
            configs[a:b + 1] = q_anchor[None, :]
            continue
        seg_path = _segment_path(path, a, b)
        best_cost = np.inf
        best_seg = None
        for q_cand in sols:
            seg = Trajectory(_interp(q_anchor, q_cand, steps), dt)
            cost = u_total(m, seg, seg_path, problem.sdf, lam2=lam2_full).total
            if cost < best_cost:
                best_cost = cost
                best_seg = seg.configs
        configs[a:b + 1] = best_seg
        q_anchor = best_seg[-1]
    return InitResult(Trajectory(configs, dt), time.monotonic() - t0, "greedy", tuple(flags))


def policy_init(m: RobotModel, problem: Problem, policy: PolicyNet,
                dt: float = 0.1) -> InitResult:
    """Deterministic (mean-action) rollout of the policy over the problem's MDP."""
    t0 = time.monotonic()
    if policy.layout.input_dim != (m.dof + 9 * (m.dof + 1) + 9 * policy.layout.lookahead
                                   + policy.layout.scene_dim) or policy.layout.dof != m.dof:
        raise LayoutMismatch(
            f"policy layout {policy.layout} incompatible with {m.dof}-dof robot"
        )
    env = PathEnv(m, problem, terminate_early=False)
    state = env.reset()
    configs = np.empty((problem.n, m.dof))
    configs[0] = problem.q0
    while not env.done:
        action = np.clip(policy.act(state), -ACTION_BOUND, ACTION_BOUND)
        out = env.step(action)
        configs[out.step] = out.state.q
        state = out.state
    return InitResult(Trajectory(configs, dt), time.monotonic() - t0, "policy")
