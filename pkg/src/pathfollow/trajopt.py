"""First-order trajectory optimizer with restart exploration.

Projected gradient descent on the trajectory objective with an Armijo
backtracking line search; only strictly improving steps are taken, so the
best-so-far objective trace is monotone. On stalls the optimizer can re-seed
from a fresh greedy initialization while keeping the best trajectory found.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .initializers import greedy_init
from .kinematics import RobotModel
from .objective import (
    ConstraintReport,
    ObjectiveValue,
    Trajectory,
    check_constraints,
    default_lam2,
    pose_errors,
    u_total,
    grad_u,
)
from .paths import Problem, TargetPath
from .policy import Demo, DemoSet
from .se3 import ROTATION_WEIGHT
from .world import SDF

# Success thresholds (positional m, rotational rad)
THRESH_TIGHT = (0.001, math.radians(0.1))  # precision benchmarks
THRESH_STANDARD = (0.01, math.radians(1.0))  # shape and random benchmarks
THRESH_ROLLOUT = (0.05, math.radians(3.0))  # raw rollout quality


@dataclass(frozen=True)
class OptimizerConfig:
    time_budget: float = 50.0  # s; wall clock
    target_error: float = 0.001  # average pose distance triggering convergence
    max_iters: int | None = None  # optional iteration cap (deterministic runs)
    step_init: float = 0.02
    step_grow: float = 1.5
    step_shrink: float = 0.5
    step_min: float = 1e-12
    armijo_c: float = 1e-4
    restart: bool = True
    stall_iters: int = 50
    stall_tol: float = 1e-6
    seed: int = 0
    lam1: float = 10.0
    lam2: float | None = None
    deterministic_trace: bool = False  # zero wall-clock stamps in the trace

    def __post_init__(self):
        if self.time_budget <= 0:
            raise ValueError("time_budget must be positive")


@dataclass
class OptRun:
    best: Trajectory
    best_value: ObjectiveValue
    trace: list = field(default_factory=list)  # (time, total, pose, obs, smooth)
    restarts: int = 0
    iterations: int = 0
    reason: str = ""

    @property
    def avg_pose_error(self) -> float:
        return self.best_value.pose / len(self.best)


def avg_pose_distance(m: RobotModel, traj: Trajectory, path: TargetPath) -> float:
    e_pos, e_rot = pose_errors(m, traj, path)
    return float(np.mean(e_pos + ROTATION_WEIGHT * e_rot))


def optimize(m: RobotModel, problem: Problem, init: Trajectory,
             cfg: OptimizerConfig = OptimizerConfig()) -> OptRun:
    """Minimize the trajectory objective from the given initial trajectory.

    Terminates when the average pose distance of the best trajectory drops
    to cfg.target_error, the time budget runs out, or cfg.max_iters is hit.
    The first row stays pinned to the problem's start configuration.
    """
    path = problem.path
    sdf = problem.sdf
    n = len(path)
    if len(init) != n:
        raise ValueError(f"initial trajectory length {len(init)} != path length {n}")
    lam2 = default_lam2(n) if cfg.lam2 is None else cfg.lam2
    rng = np.random.default_rng(cfg.seed)

    t0 = time.monotonic()

    def stamp() -> float:
        return 0.0 if cfg.deterministic_trace else time.monotonic() - t0

    cur = init.configs.copy()
    cur[0] = problem.q0
    cur_val = u_total(m, Trajectory(cur, init.dt), path, sdf, cfg.lam1, lam2)
    best = cur.copy()
    best_val = cur_val
    run = OptRun(Trajectory(best, init.dt), best_val)
    run.trace.append((stamp(), best_val.total, best_val.pose, best_val.obs, best_val.smooth))

    step = cfg.step_init
    since_improve = 0
    while True:
        if best_val.pose / n <= cfg.target_error:
            run.reason = "converged"
            break
        if time.monotonic() - t0 >= cfg.time_budget:
            run.reason = "time_budget"
            break
        if cfg.max_iters is not None and run.iterations >= cfg.max_iters:
            run.reason = "max_iters"
            break
        run.iterations += 1

        g = grad_u(m, Trajectory(cur, init.dt), path, sdf, cfg.lam1, lam2)
        g_norm2 = float(np.sum(g * g))
        accepted = False
        alpha = step
        while alpha >= cfg.step_min:
            cand = np.clip(cur - alpha * g, m.q_min, m.q_max)
            cand[0] = problem.q0
            cand_val = u_total(m, Trajectory(cand, init.dt), path, sdf, cfg.lam1, lam2)
            if cand_val.total <= cur_val.total - cfg.armijo_c * alpha * g_norm2:
                accepted = True
                break
            alpha *= cfg.step_shrink
        if accepted:
            cur, cur_val = cand, cand_val
            step = min(alpha * cfg.step_grow, 1.0)
        else:
            step = max(step * cfg.step_shrink, cfg.step_min)

        if cur_val.total < best_val.total - cfg.stall_tol:
            best = cur.copy()
            best_val = cur_val
            since_improve = 0
            run.trace.append((stamp(), best_val.total, best_val.pose, best_val.obs, best_val.smooth))
        else:
            if cur_val.total < best_val.total:
                best = cur.copy()
                best_val = cur_val
            since_improve += 1

        if since_improve >= cfg.stall_iters:
            if cfg.restart:
                seed_rng = int(rng.integers(2**31))
                fresh = greedy_init(m, problem, np.random.default_rng(seed_rng), dt=init.dt)
                cur = fresh.trajectory.configs.copy()
                cur[0] = problem.q0
                cur_val = u_total(m, Trajectory(cur, init.dt), path, sdf, cfg.lam1, lam2)
                run.restarts += 1
                step = cfg.step_init
                since_improve = 0
            else:
                run.reason = "stalled"
                break

    run.best = Trajectory(best, init.dt)
    run.best_value = best_val
    final = run.trace[-1]
    if final[1] != best_val.total:
        run.trace.append((stamp(), best_val.total, best_val.pose, best_val.obs, best_val.smooth))
    return run


def success(
    m: RobotModel,
    traj: Trajectory,
    path: TargetPath,
    sdf: SDF,
    thresholds: tuple[float, float] = THRESH_STANDARD,
) -> bool:
    """A trajectory succeeds if it is kinematically feasible (no collision,
    joint-limit, or velocity-limit violation) and its average positional and
    rotational errors stay under the thresholds."""
    report = check_constraints(m, traj, sdf)
    if not report.feasible:
        return False
    e_pos, e_rot = pose_errors(m, traj, path)
    pos_tol, rot_tol = thresholds
    return bool(np.mean(e_pos) < pos_tol and np.mean(e_rot) < rot_tol)


def gen_demos(
    m: RobotModel,
    problems: list[Problem],
    budget_per_problem: float = 120.0,
    cfg: OptimizerConfig | None = None,
    init_fn=greedy_init,
    rng: np.random.Generator | None = None,
) -> DemoSet:
    """Run the expert optimizer (restarts on) over every problem and package
    the resulting trajectories as demonstrations with quality flags."""
    rng = np.random.default_rng(0) if rng is None else rng
    base = cfg or OptimizerConfig()
    demos = []
    for problem in problems:
        seed = int(rng.integers(2**31))
        init = init_fn(m, problem, np.random.default_rng(seed))
        run = optimize(
            m, problem, init.trajectory,
            replace(base, time_budget=budget_per_problem, restart=True, seed=seed),
        )
        report = check_constraints(m, run.best, problem.sdf)
        flags = () if report.feasible else ("constraint_violations",)
        demos.append(
            Demo(
                problem=problem,
                trajectory=run.best,
                final_error=avg_pose_distance(m, run.best, problem.path),
                violation_rate=report.violation_rate,
                flags=flags,
            )
        )
    return DemoSet(tuple(demos))
