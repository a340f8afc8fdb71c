"""Benchmark suite generation, execution, reporting, and manifold export.

A suite is a directory of path files, binary world grids, and problem files
plus a manifest; runs produce a metrics CSV, a per-tag summary CSV, and
JSON convergence traces. Everything is reproducible from (seed, config):
per-cell RNGs are derived from the suite seed, the problem index, and the
method index, so serial and parallel runs yield identical numbers.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .initializers import InitResult, greedy_init, linear_init, policy_init
from .kinematics import RobotModel, ik_sample
from .objective import Trajectory, check_constraints, pose_errors, u_total
from .paths import (
    NoStartConfig,
    Problem,
    RetryExhausted,
    TargetPath,
    builtin_paths,
    generate_path,
    make_problem,
)
from .policy import PolicyNet
from .trajopt import (
    THRESH_STANDARD,
    THRESH_TIGHT,
    OptimizerConfig,
    OptRun,
    avg_pose_distance,
    optimize,
    success,
)
from .world import OccupancyGrid, synth_tabletop

METHODS = ("linear", "greedy", "policy")

BUILTIN_THRESHOLDS = {
    "Square": THRESH_STANDARD,
    "S": THRESH_STANDARD,
    "Zigzag": THRESH_STANDARD,
    "Rotation": THRESH_TIGHT,
}


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


@dataclass(frozen=True, eq=False)
class BenchItem:
    id: str
    tag: str
    problem: Problem
    thresholds: tuple[float, float]


def save_problem(path: str | Path, problem: Problem, path_file: str, world_file: str | None,
                 tag: str, thresholds) -> None:
    doc = {
        "format": 1,
        "tag": tag,
        "path_file": path_file,
        "world_file": world_file,
        "q0": [float(v) for v in problem.q0],
        "thresholds": [float(thresholds[0]), float(thresholds[1])],
    }
    Path(path).write_text(json.dumps(doc))


def load_problem(path: str | Path) -> tuple[Problem, str, tuple[float, float]]:
    """Load a problem file; sibling references resolve against its directory."""
    p = Path(path)
    doc = json.loads(p.read_text())
    if doc.get("format") != 1:
        raise ValueError(f"unsupported problem file format: {doc.get('format')!r}")
    target = TargetPath.load((p.parent / doc["path_file"]).resolve())
    if doc.get("world_file"):
        world = OccupancyGrid.load((p.parent / doc["world_file"]).resolve())
    else:
        world = OccupancyGrid.empty()
    problem = Problem(target, world, np.array(doc["q0"], dtype=float))
    thr = doc.get("thresholds", list(THRESH_STANDARD))
    return problem, doc.get("tag", "random"), (float(thr[0]), float(thr[1]))


def gen_suite(
    m: RobotModel,
    seed: int,
    out_dir: str | Path,
    n_random: int = 5,
    n_obstacle: int = 5,
    starts_per_path: int = 5,
    include_builtin: bool = False,
    builtin_starts: int = 100,
    waypoint_span: float | None = None,
    max_poses: int | None = None,
    max_waypoint_rotation: float | None = None,
) -> list[str]:
    """Generate a benchmark suite on disk; returns problem-file paths.

    Generation failures (path retry exhaustion, no start configuration) are
    recorded in the manifest under "failures" and skipped.
    """
    out = Path(out_dir)
    for sub in ("paths", "worlds", "problems"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries: list[dict] = []
    failures: list[str] = []

    specs: list[tuple[str, str, OccupancyGrid | None, TargetPath | None, tuple]] = []
    for i in range(n_random):
        specs.append((f"rnd{i:04d}", "random", None, None, THRESH_STANDARD))
    for i in range(n_obstacle):
        world = synth_tabletop(int(rng.integers(2**31)))
        specs.append((f"obs{i:04d}", "random_obs", world, None, THRESH_STANDARD))
    if include_builtin:
        for bp in builtin_paths():
            specs.append((bp.name.lower(), bp.name, None, bp, BUILTIN_THRESHOLDS[bp.name]))

    problem_files: list[str] = []
    for name, tag, world, fixed_path, thresholds in specs:
        grid = world if world is not None else OccupancyGrid.empty()
        try:
            if fixed_path is None:
                target = generate_path(m, world, rng, waypoint_span=waypoint_span,
                                       max_poses=max_poses,
                                       max_waypoint_rotation=max_waypoint_rotation)
            else:
                target = fixed_path
        except RetryExhausted:
            failures.append(f"{name}: path generation exhausted retries")
            continue
        path_rel = f"paths/{name}.json"
        target.save(out / path_rel)
        world_rel = None
        if world is not None:
            world_rel = f"worlds/{name}.grid"
            world.save(out / world_rel)
        starts = builtin_starts if fixed_path is not None else starts_per_path
        for s in range(starts):
            pid = f"{name}-s{s:03d}"
            try:
                problem = make_problem(m, target, grid, rng)
            except NoStartConfig:
                failures.append(f"{pid}: no collision-free start configuration")
                continue
            rel = f"problems/{pid}.json"
            save_problem(out / rel, problem, "../" + path_rel,
                         "../" + world_rel if world_rel else None, tag, thresholds)
            entries.append({"id": pid, "tag": tag, "file": rel})
            problem_files.append(rel)

    manifest = {
        "format": 1,
        "seed": seed,
        "robot": m.name,
        "items": entries,
        "failures": failures,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return problem_files


def load_suite(suite_dir: str | Path) -> list[BenchItem]:
    root = Path(suite_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest.get("format") != 1:
        raise ValueError("unsupported suite manifest format")
    items = []
    for entry in manifest["items"]:
        problem, tag, thresholds = load_problem(root / entry["file"])
        items.append(BenchItem(entry["id"], tag, problem, thresholds))
    return items


# ---------------------------------------------------------------------------
# Benchmark execution

REPORT_COLUMNS = [
    "problem_id", "tag", "method", "n_poses",
    "init_total", "init_pose", "init_obs", "init_smooth", "init_violation_rate",
    "gen_time", "opt_time", "iterations", "restarts",
    "final_total", "final_avg_pos_err", "final_avg_rot_err", "final_violation_rate",
    "success", "reason", "trace_file",
]


def run_cell(
    m: RobotModel,
    item: BenchItem,
    method: str,
    cfg: OptimizerConfig,
    policy: PolicyNet | None,
    cell_seed,
    deterministic: bool = False,
    skip_optimize: bool = False,
) -> tuple[dict, OptRun | None]:
    """One (problem, method) benchmark cell: initialize, optimize, measure."""
    rng = np.random.default_rng(cell_seed)
    problem = item.problem
    if method == "linear":
        init = linear_init(m, problem, rng)
    elif method == "greedy":
        init = greedy_init(m, problem, rng)
    elif method == "policy":
        if policy is None:
            raise ValueError("policy method requires a policy network")
        init = policy_init(m, problem, policy)
    else:
        raise ValueError(f"unknown method {method!r}")

    init_val = u_total(m, init.trajectory, problem.path, problem.sdf, cfg.lam1, cfg.lam2)
    init_report = check_constraints(m, init.trajectory, problem.sdf)

    row = {
        "problem_id": item.id,
        "tag": item.tag,
        "method": method,
        "n_poses": len(problem.path),
        "init_total": init_val.total,
        "init_pose": init_val.pose,
        "init_obs": init_val.obs,
        "init_smooth": init_val.smooth,
        "init_violation_rate": init_report.violation_rate,
        "gen_time": 0.0 if deterministic else init.gen_time,
    }
    if skip_optimize:
        row.update({
            "opt_time": 0.0, "iterations": 0, "restarts": 0,
            "final_total": init_val.total,
            "final_avg_pos_err": "", "final_avg_rot_err": "",
            "final_violation_rate": init_report.violation_rate,
            "success": "", "reason": "init_only", "trace_file": "",
        })
        return row, None

    run_cfg = replace(cfg, seed=int(np.random.default_rng(cell_seed).integers(2**31)),
                      deterministic_trace=deterministic)
    t0 = time.monotonic()
    run = optimize(m, problem, init.trajectory, run_cfg)
    opt_time = 0.0 if deterministic else time.monotonic() - t0
    e_pos, e_rot = pose_errors(m, run.best, problem.path)
    final_report = check_constraints(m, run.best, problem.sdf)
    row.update({
        "opt_time": opt_time,
        "iterations": run.iterations,
        "restarts": run.restarts,
        "final_total": run.best_value.total,
        "final_avg_pos_err": float(np.mean(e_pos)),
        "final_avg_rot_err": float(np.mean(e_rot)),
        "final_violation_rate": final_report.violation_rate,
        "success": int(success(m, run.best, problem.path, problem.sdf, item.thresholds)),
        "reason": run.reason,
        "trace_file": "",
    })
    return row, run


def _cell_worker(args):
    (m, item, method, cfg, policy_file, cell_seed, deterministic) = args
    policy = PolicyNet.load(policy_file, expect_dof=m.dof) if policy_file else None
    return run_cell(m, item, method, cfg, policy, cell_seed, deterministic)


def run_suite(
    m: RobotModel,
    items: list[BenchItem],
    methods: list[str],
    cfg: OptimizerConfig,
    out_dir: str | Path,
    policy_file: str | None = None,
    parallel: int = 1,
    deterministic: bool = False,
    suite_seed: int = 0,
    gnuplot: bool = False,
) -> Path:
    """Run every (problem, method) cell and write report.csv / summary.csv.

    Rows are sorted by (problem id, method) so output does not depend on the
    execution order; failures are logged per cell and the run continues.
    """
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)

    jobs = []
    for pi, item in enumerate(items):
        for mi, method in enumerate(methods):
            cell_seed = [int(suite_seed), pi, mi]
            jobs.append((m, item, method, cfg, policy_file, cell_seed, deterministic))

    results: list[tuple[dict, OptRun | None] | None] = []
    errors: list[str] = []
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futures = [pool.submit(_cell_worker, job) for job in jobs]
            for job, fut in zip(jobs, futures):
                try:
                    results.append(fut.result())
                except Exception as exc:  # keep the run alive; report the cell
                    errors.append(f"{job[1].id}/{job[2]}: {exc}")
                    results.append(None)
    else:
        for job in jobs:
            try:
                results.append(_cell_worker(job))
            except Exception as exc:
                errors.append(f"{job[1].id}/{job[2]}: {exc}")
                results.append(None)

    rows = []
    for job, res in zip(jobs, results):
        if res is None:
            continue
        row, run = res
        if run is not None:
            trace_rel = f"traces/{row['problem_id']}_{row['method']}.json"
            trace_doc = {
                "problem_id": row["problem_id"],
                "method": row["method"],
                "restarts": run.restarts,
                "reason": run.reason,
                "trace": [
                    {"t": t, "total": tot, "pose": po, "obs": ob, "smooth": sm}
                    for (t, tot, po, ob, sm) in run.trace
                ],
            }
            (out / trace_rel).write_text(json.dumps(trace_doc))
            row["trace_file"] = trace_rel
        rows.append(row)

    rows.sort(key=lambda r: (r["problem_id"], r["method"]))
    report = out / "report.csv"
    with open(report, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])

    _write_summary(rows, out / "summary.csv")
    if errors:
        (out / "errors.log").write_text("\n".join(errors) + "\n")
    if gnuplot:
        _write_gnuplot(rows, out)
    return report


def _write_summary(rows: list[dict], path: Path) -> None:
    groups: dict[tuple[str, str], list[dict]] = {}
    for row in rows:
        groups.setdefault((row["tag"], row["method"]), []).append(row)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([
            "tag", "method", "problems", "successes", "success_rate",
            "mean_init_total", "mean_init_violation_rate", "mean_gen_time",
            "mean_final_avg_pos_err",
        ])
        for (tag, method), group in sorted(groups.items()):
            succ = [r for r in group if r["success"] == 1]
            finals = [r["final_avg_pos_err"] for r in group if r["final_avg_pos_err"] != ""]
            writer.writerow([
                tag, method, len(group), len(succ),
                _fmt(len(succ) / len(group)),
                _fmt(float(np.mean([r["init_total"] for r in group]))),
                _fmt(float(np.mean([r["init_violation_rate"] for r in group]))),
                _fmt(float(np.mean([r["gen_time"] for r in group]))),
                _fmt(float(np.mean(finals)) if finals else math.nan),
            ])


def _write_gnuplot(rows: list[dict], out: Path) -> None:
    """Convenience emitter: one gnuplot script plotting every convergence trace."""
    lines = [
        "set logscale y",
        'set xlabel "time (s)"',
        'set ylabel "objective"',
        'set term pngcairo size 1200,800',
        'set output "convergence.png"',
    ]
    plots = []
    for row in rows:
        if not row.get("trace_file"):
            continue
        doc = json.loads((out / row["trace_file"]).read_text())
        dat = out / (row["trace_file"].replace(".json", ".dat"))
        with open(dat, "w") as f:
            for e in doc["trace"]:
                f.write(f"{e['t']} {e['total']}\n")
        plots.append(f'"{dat.relative_to(out)}" with steps title "{row["problem_id"]}/{row["method"]}"')
    if plots:
        lines.append("plot " + ", \\\n     ".join(plots))
    (out / "plot.gp").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Configuration-manifold export (PCA)


def pca_fit(samples: np.ndarray, n_components: int = 2):
    """PCA by covariance eigendecomposition; returns (mean, components, eigenvalues).

    Components are rows, orthonormal, sorted by decreasing eigenvalue, with a
    deterministic sign convention (largest-magnitude entry positive).
    """
    x = np.asarray(samples, dtype=float)
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / max(len(x) - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:n_components]
    comps = evecs[:, order].T
    for i in range(comps.shape[0]):
        k = int(np.argmax(np.abs(comps[i])))
        if comps[i, k] < 0:
            comps[i] = -comps[i]
    return mean, comps, evals[order]


def export_manifold(
    m: RobotModel,
    problem: Problem,
    out_path: str | Path,
    samples_per_pose: int = 5000,
    stride: int = 10,
    rng: np.random.Generator | None = None,
    init_trajectories: dict[str, Trajectory] | None = None,
) -> dict:
    """Sample collision-free IK solutions along the path, project them to the
    top-2 principal components, and write a point-cloud CSV.

    Rows are (kind, index, pc1, pc2): kind "ik" carries the pose index,
    trajectory kinds carry the step index. Poses with no collision-free
    solution are skipped and reported in the returned metadata.
    """
    rng = np.random.default_rng() if rng is None else rng
    path = problem.path
    pose_indices = list(range(0, len(path), stride))
    clouds = []
    skipped = []
    for idx in pose_indices:
        sols = ik_sample(m, path.pose(idx), samples_per_pose, sdf=problem.sdf, rng=rng)
        if not sols:
            skipped.append(idx)
            continue
        clouds.append((idx, np.stack(sols)))
    if not clouds:
        raise RuntimeError("no pose along the path admits a collision-free IK solution")
    pooled = np.concatenate([c for _, c in clouds], axis=0)
    mean, comps, evals = pca_fit(pooled, 2)

    out_path = Path(out_path)
    with open(out_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["kind", "index", "pc1", "pc2"])
        for idx, cloud in clouds:
            proj = (cloud - mean) @ comps.T
            for row in proj:
                writer.writerow(["ik", idx, _fmt(float(row[0])), _fmt(float(row[1]))])
        for name, traj in (init_trajectories or {}).items():
            proj = (traj.configs - mean) @ comps.T
            for step, row in enumerate(proj):
                writer.writerow([name, step, _fmt(float(row[0])), _fmt(float(row[1]))])

    meta = {
        "samples": int(pooled.shape[0]),
        "pose_indices": [i for i, _ in clouds],
        "skipped_poses": skipped,
        "eigenvalues": [float(v) for v in evals],
        "mean": [float(v) for v in mean],
        "components": [[float(v) for v in c] for c in comps],
    }
    Path(str(out_path) + ".meta.json").write_text(json.dumps(meta, indent=1))
    return meta
