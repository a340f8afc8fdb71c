"""Benchmark command-line front-end.

Subcommands: gen-paths, gen-bench, gen-demos, run-bench, export-manifold,
rollout, optimize, train-bc, train-cem. Every subcommand accepts --seed and
--out; the PATHFOLLOW_DATA_DIR environment variable sets the default output
root (default ./pathfollow_data).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import bench
from .initializers import greedy_init, linear_init, policy_init
from .kinematics import RobotModel, default_model
from .mdp import PathEnv, write_episode_trace
from .objective import Trajectory
from .paths import Problem, generate_path
from .policy import DemoSet, Demo, Layout, PolicyNet, bc_train, dfs_train
from .trajopt import OptimizerConfig, gen_demos, optimize
from .world import OccupancyGrid, synth_tabletop


def _data_dir() -> Path:
    return Path(os.environ.get("PATHFOLLOW_DATA_DIR", "pathfollow_data"))


def _load_model(args) -> RobotModel:
    return RobotModel.load(args.robot) if args.robot else default_model()


def _load_traj(path) -> Trajectory:
    return Trajectory.from_dict(json.loads(Path(path).read_text()))


def _save_traj(traj: Trajectory, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(traj.to_dict()))


def _make_init(m, problem, method, policy_file, rng, init_file=None):
    if method == "file":
        if not init_file:
            raise SystemExit("--init file requires --init-file")
        return _load_traj(init_file)
    if method == "linear":
        return linear_init(m, problem, rng).trajectory
    if method == "greedy":
        return greedy_init(m, problem, rng).trajectory
    if method == "policy":
        if not policy_file:
            raise SystemExit("--init policy requires --policy")
        net = PolicyNet.load(policy_file, expect_dof=m.dof)
        return policy_init(m, problem, net).trajectory
    raise SystemExit(f"unknown init method {method!r}")


def cmd_gen_paths(args) -> int:
    m = _load_model(args)
    out = Path(args.out or _data_dir() / "paths")
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    written = 0
    for i in range(args.count):
        world = synth_tabletop(int(rng.integers(2**31))) if args.obstacles else None
        try:
            path = generate_path(m, world, rng, waypoint_span=args.span, max_poses=args.max_poses,
                                 max_waypoint_rotation=args.max_rotation)
        except Exception as exc:
            print(f"path {i}: generation failed ({exc})", file=sys.stderr)
            continue
        path.save(out / f"path{i:04d}.json")
        if world is not None:
            world.save(out / f"path{i:04d}.grid")
        written += 1
    print(f"wrote {written}/{args.count} paths to {out}")
    return 0 if written else 1


def cmd_gen_bench(args) -> int:
    m = _load_model(args)
    out = Path(args.out or _data_dir() / "bench")
    files = bench.gen_suite(
        m, args.seed, out,
        n_random=args.random_count,
        n_obstacle=args.obstacle_count,
        starts_per_path=args.starts_per_path,
        include_builtin=args.include_builtin,
        builtin_starts=args.builtin_starts,
        waypoint_span=args.span,
        max_poses=args.max_poses,
        max_waypoint_rotation=args.max_rotation,
    )
    print(f"wrote {len(files)} problems to {out}")
    return 0


def cmd_gen_demos(args) -> int:
    m = _load_model(args)
    items = bench.load_suite(args.suite)
    if args.limit:
        items = items[: args.limit]
    rng = np.random.default_rng(args.seed)
    demos = gen_demos(m, [it.problem for it in items], budget_per_problem=args.budget, rng=rng)
    out = Path(args.out or _data_dir() / "demos")
    out.mkdir(parents=True, exist_ok=True)
    for item, demo in zip(items, demos):
        doc = {
            "format": 1,
            "problem_file": str(Path(args.suite).resolve() / "problems" / f"{item.id}.json"),
            "trajectory": demo.trajectory.to_dict(),
            "final_error": demo.final_error,
            "violation_rate": demo.violation_rate,
            "flags": list(demo.flags),
        }
        (out / f"demo_{item.id}.json").write_text(json.dumps(doc))
    print(f"wrote {len(demos)} demos to {out}")
    return 0


def load_demo_dir(demo_dir) -> DemoSet:
    demos = []
    for f in sorted(Path(demo_dir).glob("demo_*.json")):
        doc = json.loads(f.read_text())
        if doc.get("format") != 1:
            raise ValueError(f"{f}: unsupported demo format")
        problem, _, _ = bench.load_problem(doc["problem_file"])
        demos.append(
            Demo(
                problem=problem,
                trajectory=Trajectory.from_dict(doc["trajectory"]),
                final_error=float(doc.get("final_error", float("nan"))),
                violation_rate=float(doc.get("violation_rate", 0.0)),
                flags=tuple(doc.get("flags", ())),
            )
        )
    return DemoSet(tuple(demos))


def cmd_run_bench(args) -> int:
    m = _load_model(args)
    items = bench.load_suite(args.suite)
    methods = [s.strip() for s in args.methods.split(",") if s.strip()]
    cfg = OptimizerConfig(
        time_budget=args.budget,
        target_error=args.target_error,
        max_iters=args.opt_iters,
        restart=not args.no_restart,
    )
    parallel = 1 if args.deterministic else args.parallel
    out = Path(args.out or _data_dir() / "run")
    report = bench.run_suite(
        m, items, methods, cfg, out,
        policy_file=args.policy,
        parallel=parallel,
        deterministic=args.deterministic,
        suite_seed=args.seed,
        gnuplot=args.gnuplot,
    )
    print(f"report written to {report}")
    return 0


def cmd_export_manifold(args) -> int:
    m = _load_model(args)
    problem, _, _ = bench.load_problem(args.problem)
    rng = np.random.default_rng(args.seed)
    inits = {}
    for method in [s.strip() for s in (args.inits or "").split(",") if s.strip()]:
        inits[method] = _make_init(m, problem, method, args.policy, rng)
    out = Path(args.out or _data_dir() / "manifold.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    meta = bench.export_manifold(
        m, problem, out,
        samples_per_pose=args.samples,
        stride=args.stride,
        rng=rng,
        init_trajectories=inits,
    )
    print(f"manifold with {meta['samples']} samples written to {out}")
    return 0


def cmd_rollout(args) -> int:
    m = _load_model(args)
    problem, _, _ = bench.load_problem(args.problem)
    net = PolicyNet.load(args.policy, expect_dof=m.dof)
    result = policy_init(m, problem, net)
    out = args.out or _data_dir() / "rollout.json"
    _save_traj(result.trajectory, out)
    if args.trace:
        env = PathEnv(m, problem, terminate_early=False)
        state = env.reset()
        outcomes = []
        while not env.done:
            outcome = env.step(net.act(state))
            outcomes.append(outcome)
            state = outcome.state
        write_episode_trace(outcomes, args.trace)
    print(f"trajectory ({len(result.trajectory)} configs) written to {out}")
    return 0


def cmd_optimize(args) -> int:
    m = _load_model(args)
    problem, _, _ = bench.load_problem(args.problem)
    rng = np.random.default_rng(args.seed)
    init = _make_init(m, problem, args.init, args.policy, rng, args.init_file)
    cfg = OptimizerConfig(
        time_budget=args.budget,
        target_error=args.target_error,
        max_iters=args.opt_iters,
        restart=not args.no_restart,
        seed=args.seed,
    )
    run = optimize(m, problem, init, cfg)
    out = args.out or _data_dir() / "optimized.json"
    _save_traj(run.best, out)
    if args.trace:
        doc = {
            "reason": run.reason,
            "restarts": run.restarts,
            "iterations": run.iterations,
            "trace": [
                {"t": t, "total": tot, "pose": po, "obs": ob, "smooth": sm}
                for (t, tot, po, ob, sm) in run.trace
            ],
        }
        Path(args.trace).write_text(json.dumps(doc))
    print(
        f"optimized to total={run.best_value.total:.6g} "
        f"(avg pose err {run.avg_pose_error:.6g}, {run.reason}); wrote {out}"
    )
    return 0


def cmd_train_bc(args) -> int:
    m = _load_model(args)
    demos = load_demo_dir(args.demos)
    if len(demos) == 0:
        raise SystemExit(f"no demos found in {args.demos}")
    rng = np.random.default_rng(args.seed)
    hidden = tuple(int(s) for s in args.hidden.split(",") if s)
    net = PolicyNet.create(Layout(m.dof), hidden=hidden, rng=rng)
    result = bc_train(net, m, demos, epochs=args.epochs, lr=args.lr)
    out = args.out or _data_dir() / "policy_bc.json"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    net.save(out)
    print(f"final loss {result.losses[-1]:.6g} after {args.epochs} epochs; wrote {out}")
    return 0


def cmd_train_cem(args) -> int:
    m = _load_model(args)
    items = bench.load_suite(args.suite)
    if args.limit:
        items = items[: args.limit]
    rng = np.random.default_rng(args.seed)
    hidden = tuple(int(s) for s in args.hidden.split(",") if s)
    if args.init_policy:
        net = PolicyNet.load(args.init_policy, expect_dof=m.dof)
    else:
        net = PolicyNet.create(Layout(m.dof), hidden=hidden, rng=rng)
    result = dfs_train(
        net, m, [it.problem for it in items], rng,
        iters=args.iters, population=args.population,
        elite_frac=args.elite_frac, sigma0=args.sigma,
    )
    out = args.out or _data_dir() / "policy_cem.json"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    net.save(out)
    print(f"best fitness {result.best_fitness[-1]:.6g} after {args.iters} iters; wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathfollow",
        description="Cartesian path-following benchmark tools for redundant manipulators",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="RNG seed")
        p.add_argument("--out", type=str, default=None, help="output file or directory")
        p.add_argument("--robot", type=str, default=None, help="robot model JSON (default: shipped 7-DoF)")

    p = sub.add_parser("gen-paths", help="sample random valid target paths")
    common(p)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--obstacles", action="store_true", help="attach random tabletop scenes")
    p.add_argument("--span", type=float, default=None, help="waypoint sampling half-width (m)")
    p.add_argument("--max-poses", type=int, default=None, help="reject paths longer than this")
    p.add_argument("--max-rotation", type=float, default=None,
                   help="bound waypoint-to-waypoint rotation (rad)")
    p.set_defaults(func=cmd_gen_paths)

    p = sub.add_parser("gen-bench", help="generate a benchmark suite")
    common(p)
    p.add_argument("--random-count", type=int, default=5, help="paths without obstacles")
    p.add_argument("--obstacle-count", type=int, default=5, help="paths with tabletop scenes")
    p.add_argument("--starts-per-path", type=int, default=5)
    p.add_argument("--include-builtin", action="store_true", help="add Square/S/Zigzag/Rotation")
    p.add_argument("--builtin-starts", type=int, default=100)
    p.add_argument("--span", type=float, default=None)
    p.add_argument("--max-poses", type=int, default=None)
    p.add_argument("--max-rotation", type=float, default=None)
    p.set_defaults(func=cmd_gen_bench)

    p = sub.add_parser("gen-demos", help="optimize suite problems into demonstrations")
    common(p)
    p.add_argument("--suite", type=str, required=True)
    p.add_argument("--budget", type=float, default=120.0, help="seconds per problem")
    p.add_argument("--limit", type=int, default=None, help="use only the first N problems")
    p.set_defaults(func=cmd_gen_demos)

    p = sub.add_parser("run-bench", help="run initializer x optimizer benchmark cells")
    common(p)
    p.add_argument("--suite", type=str, required=True)
    p.add_argument("--methods", type=str, default="linear,greedy")
    p.add_argument("--policy", type=str, default=None, help="policy weights for the policy method")
    p.add_argument("--budget", type=float, default=50.0, help="optimizer time budget (s)")
    p.add_argument("--target-error", type=float, default=0.001)
    p.add_argument("--opt-iters", type=int, default=None, help="iteration cap (use with --deterministic)")
    p.add_argument("--no-restart", action="store_true")
    p.add_argument("--parallel", type=int, default=os.cpu_count() or 1)
    p.add_argument("--deterministic", action="store_true",
                   help="serial execution, zeroed timing columns, iteration-capped optimization")
    p.add_argument("--gnuplot", action="store_true", help="emit a gnuplot convergence script")
    p.set_defaults(func=cmd_run_bench)

    p = sub.add_parser("export-manifold", help="PCA point cloud of IK solutions along a path")
    common(p)
    p.add_argument("--problem", type=str, required=True, help="problem JSON file")
    p.add_argument("--samples", type=int, default=5000, help="IK samples per pose")
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--inits", type=str, default=None, help="comma list of inits to project")
    p.add_argument("--policy", type=str, default=None)
    p.set_defaults(func=cmd_export_manifold)

    p = sub.add_parser("rollout", help="roll a trained policy over a problem")
    common(p)
    p.add_argument("--problem", type=str, required=True)
    p.add_argument("--policy", type=str, required=True)
    p.add_argument("--trace", type=str, default=None, help="write a JSONL episode trace")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("optimize", help="optimize a trajectory from a chosen initializer")
    common(p)
    p.add_argument("--problem", type=str, required=True)
    p.add_argument("--init", type=str, default="greedy",
                   choices=["linear", "greedy", "policy", "file"])
    p.add_argument("--init-file", type=str, default=None)
    p.add_argument("--policy", type=str, default=None)
    p.add_argument("--budget", type=float, default=50.0)
    p.add_argument("--target-error", type=float, default=0.001)
    p.add_argument("--opt-iters", type=int, default=None)
    p.add_argument("--no-restart", action="store_true")
    p.add_argument("--trace", type=str, default=None)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("train-bc", help="behavior-clone a policy from demos")
    common(p)
    p.add_argument("--demos", type=str, required=True, help="directory of demo_*.json files")
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--hidden", type=str, default="1024,1024,1024")
    p.set_defaults(func=cmd_train_bc)

    p = sub.add_parser("train-cem", help="derivative-free reward search over policy weights")
    common(p)
    p.add_argument("--suite", type=str, required=True)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--population", type=int, default=32)
    p.add_argument("--elite-frac", type=float, default=0.25)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--hidden", type=str, default="64,64,64")
    p.add_argument("--init-policy", type=str, default=None)
    p.set_defaults(func=cmd_train_cem)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
