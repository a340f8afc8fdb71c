"""Target-path synthesis and benchmark path definitions.

Paths are dense pose sequences spaced at most 0.5 cm apart positionally.
Random paths come from cubic B-splines through sampled valid waypoints,
resampled by arc length, with orientations slerped between waypoints by
arc-length fraction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path as FsPath

import numpy as np
from scipy.interpolate import make_interp_spline

from . import se3
from .kinematics import IK_POS_TOL, IK_ROT_TOL, RobotModel, ee_pose, ik_sample, ik_solve
from .se3 import Pose, Quat
from .world import SDF, OccupancyGrid, build_sdf

SPACING = 0.005  # m between consecutive path poses
SPACING_SLACK = 1e-6

# Pose-sampling workspace (meters); the occupancy lattice covers the same
# footprint but starts at z = 0.2.
WORKSPACE_MIN = np.array([0.2, -0.7, 0.0])
WORKSPACE_MAX = np.array([1.2, 0.7, 1.2])

VALID_POSE_SAMPLES = 30  # ik_sample budget behind is_valid_pose


class RetryExhausted(RuntimeError):
    pass


class NoStartConfig(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TargetPath:
    """Dense sequence of target poses with bookkeeping metadata."""

    positions: np.ndarray  # (N, 3)
    quats: np.ndarray  # (N, 4) wxyz
    name: str = "path"
    seed: int | None = None
    has_obstacles: bool = False

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        qs = np.asarray(self.quats, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or qs.shape != (pos.shape[0], 4):
            raise ValueError("positions must be (N, 3) and quats (N, 4)")
        if pos.shape[0] < 2:
            raise ValueError("a path needs at least two poses")
        gaps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
        if gaps.size and gaps.max() > SPACING + SPACING_SLACK:
            raise ValueError(f"pose spacing {gaps.max():.6f} m exceeds {SPACING} m")
        if np.any(pos < WORKSPACE_MIN - 1e-9) or np.any(pos > WORKSPACE_MAX + 1e-9):
            raise ValueError("path leaves the workspace box")
        qs = qs / np.linalg.norm(qs, axis=1, keepdims=True)
        pos = pos.copy()
        pos.flags.writeable = False
        qs.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "quats", qs)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @cached_property
    def rotations(self) -> np.ndarray:
        """(N, 3, 3) rotation matrices, cached."""
        return se3.quats_to_matrices(self.quats)

    def pose(self, i: int) -> Pose:
        return Pose(self.positions[i], Quat.from_array(self.quats[i]))

    @property
    def poses(self) -> list[Pose]:
        return [self.pose(i) for i in range(len(self))]

    def arc_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.positions, axis=0), axis=1).sum())

    def to_dict(self) -> dict:
        return {
            "format": 1,
            "quaternion_order": "wxyz",
            "name": self.name,
            "seed": self.seed,
            "has_obstacles": self.has_obstacles,
            "poses": [
                {"p": [float(v) for v in p], "q": [float(v) for v in q]}
                for p, q in zip(self.positions, self.quats)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TargetPath":
        if d.get("format") != 1:
            raise ValueError(f"unsupported path file format: {d.get('format')!r}")
        if d.get("quaternion_order", "wxyz") != "wxyz":
            raise ValueError("path quaternions must be wxyz")
        pos = np.array([e["p"] for e in d["poses"]], dtype=float)
        qs = np.array([e["q"] for e in d["poses"]], dtype=float)
        return cls(pos, qs, name=d.get("name", "path"), seed=d.get("seed"),
                   has_obstacles=bool(d.get("has_obstacles", False)))

    def save(self, path: str | FsPath) -> None:
        FsPath(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | FsPath) -> "TargetPath":
        return cls.from_dict(json.loads(FsPath(path).read_text()))


@dataclass(frozen=True, eq=False)
class Problem:
    """A path-following problem: target path, world, start configuration."""

    path: TargetPath
    world: OccupancyGrid
    q0: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q0, dtype=float).copy()
        q.flags.writeable = False
        object.__setattr__(self, "q0", q)

    @cached_property
    def sdf(self) -> SDF:
        return build_sdf(self.world)

    @property
    def n(self) -> int:
        return len(self.path)


def _reachable(m: RobotModel, p: np.ndarray) -> bool:
    """Conservative prefilter: positions beyond the stretched chain are unreachable."""
    return bool(np.linalg.norm(np.asarray(p) - m.base_position) <= m.max_reach)


def is_valid_pose(m: RobotModel, sdf: SDF | None, x: Pose,
                  rng: np.random.Generator | None = None) -> bool:
    """A pose is valid when at least one sampled IK solution is collision-free.

    Uses the same attempt budget as ik_sample(n=30) but stops at the first
    solution, which decides non-emptiness identically.
    """
    if not _reachable(m, x.position):
        return False
    rng = np.random.default_rng() if rng is None else rng
    sols = ik_sample(m, x, 1, sdf=sdf, rng=rng, attempts=10 * VALID_POSE_SAMPLES)
    return len(sols) > 0


def _sample_valid_pose(m, sdf, rng, lo, hi, attempts=60, ik_attempts=96, orientation=None):
    for _ in range(attempts):
        p = rng.uniform(lo, hi)
        if not _reachable(m, p):
            continue
        q = orientation(rng) if orientation is not None else se3.random_quat(rng)
        x = Pose(p, q)
        sol = ik_sample(m, x, 1, sdf=sdf, rng=rng, attempts=ik_attempts)
        if sol:
            return x, sol[0]
    return None, None


def _perturbed_quat(base: Quat, max_angle: float, rng) -> Quat:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return base.mul(Quat.from_axis_angle(axis, rng.uniform(0.0, max_angle)))


def _chain_validity_sweep(m, sdf, positions, quats, q_anchor, rng) -> bool:
    """Check every pose admits a collision-free IK solution.

    Consecutive poses are 0.5 cm apart, so warm-starting from the previous
    solution converges in a few iterations; random re-sampling is the
    fallback before declaring a pose invalid.
    """
    from .world import in_collision

    q = np.asarray(q_anchor, dtype=float)
    for i in range(positions.shape[0]):
        x = Pose(positions[i], Quat.from_array(quats[i]))
        res = ik_solve(m, x, q, max_iters=40)
        if res.success and (sdf is None or not in_collision(m, res.q, sdf)):
            q = res.q
            continue
        sols = ik_sample(m, x, 1, sdf=sdf, rng=rng, attempts=10 * VALID_POSE_SAMPLES)
        if not sols:
            return False
        q = sols[0]
    return True


def _cumlen(points: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def _stations(total: float, spacing: float) -> np.ndarray:
    out = np.arange(0.0, total, spacing)
    if total - out[-1] > 1e-12:
        out = np.append(out, total)
    return out


def resample_spline(wp_pos: np.ndarray, spacing: float = SPACING):
    """Cubic B-spline through the waypoints, resampled at arc-length intervals.

    Returns (positions, stations, waypoint_arclengths). The dense evaluation
    is refined until consecutive resampled chords respect the spacing bound;
    raises ValueError for degenerate (coincident-waypoint) inputs.
    """
    wp_pos = np.asarray(wp_pos, dtype=float)
    chords = np.linalg.norm(np.diff(wp_pos, axis=0), axis=1)
    if np.any(chords < 1e-6):
        raise ValueError("coincident waypoints")
    t_wp = np.concatenate([[0.0], np.cumsum(chords)])
    t_wp /= t_wp[-1]
    spline = make_interp_spline(t_wp, wp_pos, k=3)
    n_dense = 2048
    for _ in range(6):
        dense_t = np.linspace(0.0, 1.0, n_dense)
        s_dense = _cumlen(spline(dense_t))
        stations = _stations(float(s_dense[-1]), spacing)
        positions = spline(np.interp(stations, s_dense, dense_t))
        gaps = np.linalg.norm(np.diff(positions, axis=0), axis=1)
        if gaps.max() <= spacing + 1e-7:
            break
        n_dense *= 2
    if gaps.max() > spacing + 1e-7:
        raise ValueError("could not densify the spline to the requested spacing")
    s_wp = np.interp(t_wp, dense_t, s_dense)
    return positions, stations, s_wp


def generate_path(
    m: RobotModel,
    world: OccupancyGrid | None,
    rng: np.random.Generator,
    *,
    n_waypoints: int | None = None,
    spacing: float = SPACING,
    waypoint_span: float | None = None,
    max_poses: int | None = None,
    max_waypoint_rotation: float | None = None,
    max_retries: int = 50,
) -> TargetPath:
    """Sample a valid random path: B-spline through 5-8 valid waypoints,
    resampled at `spacing` arc-length intervals with slerped orientations.

    `waypoint_span` shrinks the waypoint sampling box to a cube of that
    half-width around a valid anchor pose and `max_waypoint_rotation` bounds
    each waypoint's rotation relative to the previous one (desk-scale
    problems need both, or short paths demand untrackably fast rotation);
    `max_poses` rejects paths longer than the cap. Raises RetryExhausted
    after `max_retries` rejected attempts.
    """
    sdf = build_sdf(world) if world is not None else None
    rejections = 0
    while rejections < max_retries:
        k = int(n_waypoints if n_waypoints is not None else rng.integers(5, 9))
        if waypoint_span is not None:
            # anchor the local waypoint box on a pose that is itself valid,
            # so desk-scale boxes land in reachable space
            anchor_pose, _ = _sample_valid_pose(m, sdf, rng, WORKSPACE_MIN, WORKSPACE_MAX)
            if anchor_pose is None:
                rejections += 1
                continue
            center = anchor_pose.position
            lo = np.maximum(center - waypoint_span, WORKSPACE_MIN)
            hi = np.minimum(center + waypoint_span, WORKSPACE_MAX)
        else:
            lo, hi = WORKSPACE_MIN, WORKSPACE_MAX
        waypoints = []
        anchors = []
        ok = True
        for _ in range(k):
            orientation = None
            if max_waypoint_rotation is not None and waypoints:
                prev_q = waypoints[-1].orientation
                orientation = lambda r: _perturbed_quat(prev_q, max_waypoint_rotation, r)
            x, q_sol = _sample_valid_pose(m, sdf, rng, lo, hi, orientation=orientation)
            if x is None:
                ok = False
                break
            waypoints.append(x)
            anchors.append(q_sol)
        if not ok:
            rejections += 1
            continue

        wp_pos = np.stack([w.position for w in waypoints])
        try:
            positions, stations, s_wp = resample_spline(wp_pos, spacing)
        except ValueError:
            rejections += 1
            continue
        if len(stations) < 2 or (max_poses is not None and len(stations) > max_poses):
            rejections += 1
            continue

        # orientation: slerp between bracketing waypoints by arc-length fraction
        quats = np.empty((len(stations), 4))
        seg_idx = np.clip(np.searchsorted(s_wp, stations, side="right") - 1, 0, k - 2)
        for i, (st, j) in enumerate(zip(stations, seg_idx)):
            span = s_wp[j + 1] - s_wp[j]
            frac = 0.0 if span <= 0 else min(max((st - s_wp[j]) / span, 0.0), 1.0)
            quats[i] = se3.slerp(waypoints[j].orientation, waypoints[j + 1].orientation, frac).to_array()

        if np.any(positions < WORKSPACE_MIN - 1e-9) or np.any(positions > WORKSPACE_MAX + 1e-9):
            rejections += 1
            continue
        if not _chain_validity_sweep(m, sdf, positions, quats, anchors[0], rng):
            rejections += 1
            continue
        return TargetPath(positions, quats, name=f"random-{k}wp",
                          has_obstacles=world is not None and bool(world.occ.any()))
    raise RetryExhausted(f"no valid path after {max_retries} attempts")


def make_problem(
    m: RobotModel,
    path: TargetPath,
    world: OccupancyGrid,
    rng: np.random.Generator,
    *,
    n_candidates: int = 20,
) -> Problem:
    """Draw a start configuration uniformly from collision-free IK solutions
    at the first path pose."""
    problem = Problem(path, world, np.zeros(m.dof))
    sols = ik_sample(m, path.pose(0), n_candidates, sdf=problem.sdf, rng=rng)
    if not sols:
        raise NoStartConfig("no collision-free IK solution at the first pose")
    q0 = sols[int(rng.integers(len(sols)))]
    return Problem(path, world, q0)


# ---------------------------------------------------------------------------
# Built-in benchmark paths


def _resample_polyline(vertices: np.ndarray, n: int) -> np.ndarray:
    seg = np.linalg.norm(np.diff(vertices, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    stations = np.linspace(0.0, s[-1], n)
    out = np.empty((n, 3))
    for axis in range(3):
        out[:, axis] = np.interp(stations, s, vertices[:, axis])
    return out


def square_path(n: int = 320, center=(0.7, 0.0, 0.7), plane_x: float | None = None) -> TargetPath:
    """Closed square in the vertical y-z plane, fixed orientation.

    Side length is derived from n so consecutive poses sit exactly 0.5 cm
    apart along the perimeter.
    """
    c = np.array(center, dtype=float)
    if plane_x is not None:
        c[0] = plane_x
    half = (n - 1) * SPACING / 8.0  # perimeter = 8 * half
    corners = np.array(
        [
            [c[0], c[1] + half, c[2] + half],
            [c[0], c[1] - half, c[2] + half],
            [c[0], c[1] - half, c[2] - half],
            [c[0], c[1] + half, c[2] - half],
            [c[0], c[1] + half, c[2] + half],
        ]
    )
    pos = _resample_polyline(corners, n)
    quats = np.tile(Quat.identity().to_array(), (n, 1))
    return TargetPath(pos, quats, name="Square")


def s_path(n: int = 301, center=(0.7, 0.0, 0.7)) -> TargetPath:
    """S-shaped curve: two stacked semicircles in the y-z plane, fixed orientation."""
    c = np.array(center, dtype=float)
    total = (n - 1) * SPACING
    r = total / (2.0 * np.pi)
    s = np.linspace(0.0, total, n)
    pos = np.empty((n, 3))
    pos[:, 0] = c[0]
    half = total / 2.0
    upper = s <= half
    theta = np.pi / 2 - s[upper] / r
    pos[upper, 1] = c[1] + r * np.cos(theta)
    pos[upper, 2] = c[2] + r + r * np.sin(theta)
    phi = np.pi / 2 - (s[~upper] - half) / r
    pos[~upper, 1] = c[1] - r * np.cos(phi)
    pos[~upper, 2] = c[2] - r + r * np.sin(phi)
    quats = np.tile(Quat.identity().to_array(), (n, 1))
    return TargetPath(pos, quats, name="S")


def zigzag_path(n: int = 227, center=(0.7, 0.0, 0.65), n_segments: int = 4,
                y_advance: float | None = None) -> TargetPath:
    """Zigzag polyline in the y-z plane, fixed orientation."""
    c = np.array(center, dtype=float)
    seg_len = (n - 1) * SPACING / n_segments
    if y_advance is None:
        y_advance = min(0.14, 0.6 * seg_len)
    dz = float(np.sqrt(max(seg_len**2 - y_advance**2, 1e-12)))
    verts = [np.array([c[0], c[1] - y_advance * n_segments / 2.0, c[2] - dz / 2.0])]
    for i in range(n_segments):
        prev = verts[-1]
        verts.append(prev + np.array([0.0, y_advance, dz if i % 2 == 0 else -dz]))
    pos = _resample_polyline(np.stack(verts), n)
    quats = np.tile(Quat.identity().to_array(), (n, 1))
    return TargetPath(pos, quats, name="Zigzag")


def rotation_path(n: int = 209, position=(0.7, 0.0, 0.7), sweep_deg: float = 45.0) -> TargetPath:
    """Fixed position; orientation sweeps +/-sweep in pitch, then in yaw.

    Each phase is a triangle wave 0 -> +sweep -> -sweep -> 0 whose extremes
    are hit exactly at sample points.
    """
    pos = np.tile(np.array(position, dtype=float), (n, 1))
    amp = np.radians(sweep_deg)
    half = n // 2

    def triangle(total: int) -> np.ndarray:
        last = total - 1
        knots = [0, round(last * 0.25), round(last * 0.75), last]
        return np.interp(np.arange(total), knots, [0.0, 1.0, -1.0, 0.0])

    quats = np.empty((n, 4))
    for i, a in enumerate(triangle(half)):
        quats[i] = Quat.from_axis_angle([0.0, 1.0, 0.0], amp * a).to_array()  # pitch
    for i, a in enumerate(triangle(n - half)):
        quats[half + i] = Quat.from_axis_angle([0.0, 0.0, 1.0], amp * a).to_array()  # yaw
    return TargetPath(pos, quats, name="Rotation")


def builtin_paths(lengths: dict[str, int] | None = None) -> list[TargetPath]:
    """The four shipped benchmark paths (Square, S, Zigzag, Rotation)."""
    lengths = lengths or {}
    return [
        square_path(lengths.get("Square", 320)),
        s_path(lengths.get("S", 301)),
        zigzag_path(lengths.get("Zigzag", 227)),
        rotation_path(lengths.get("Rotation", 209)),
    ]
