"""Serial-chain kinematics: FK, geometric Jacobian, null-space projector, IK.

The robot is a fixed-base chain of revolute joints loaded from a JSON model
file (quaternions stored wxyz, `format: 1`). Configurations are plain float
arrays of length `dof`. Models are immutable after load; every operation
here is reentrant.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .se3 import Pose, Quat

DEFAULT_MODEL_RESOURCE = "generic7.json"

# Damping used by the null-space projector so it stays finite at singular
# configurations; negligible elsewhere.
PROJECTOR_DAMPING = 1e-6

SINGULARITY_THRESHOLD = 0.005  # on det(J J^T)


class IkError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Joint:
    """Revolute joint: fixed parent-to-joint transform, then rotation about axis."""

    origin: Pose
    axis: np.ndarray  # unit 3-vector, joint frame
    q_min: float
    q_max: float
    v_max: float  # rad/s

    def __post_init__(self):
        ax = np.array(self.axis, dtype=float).reshape(3)
        n = np.linalg.norm(ax)
        if n == 0.0:
            raise ValueError("joint axis must be nonzero")
        ax = ax / n
        ax.flags.writeable = False
        object.__setattr__(self, "axis", ax)
        if not self.q_min < self.q_max:
            raise ValueError("q_min must be < q_max")
        if self.v_max <= 0.0:
            raise ValueError("v_max must be positive")


@dataclass(frozen=True, eq=False)
class CollisionSphere:
    link: int  # 0-based joint/link index the sphere is attached to
    offset: np.ndarray  # center offset in link frame (m)
    radius: float

    def __post_init__(self):
        off = np.array(self.offset, dtype=float).reshape(3)
        off.flags.writeable = False
        object.__setattr__(self, "offset", off)
        if self.radius <= 0.0:
            raise ValueError("sphere radius must be positive")


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


class RobotModel:
    """Immutable serial chain with per-link collision spheres."""

    def __init__(self, name: str, joints: list[Joint], ee_offset: Pose,
                 spheres: list[CollisionSphere]):
        self.name = name
        self.joints = tuple(joints)
        self.ee_offset = ee_offset
        self.spheres = tuple(spheres)
        d = len(self.joints)
        if d < 1:
            raise ValueError("model needs at least one joint")
        for s in self.spheres:
            if not 0 <= s.link < d:
                raise ValueError(f"sphere link index {s.link} out of range")

        # Precomputed arrays for the batched FK/Jacobian paths.
        self._origin_R = np.stack([j.origin.orientation.to_matrix() for j in self.joints])
        self._origin_p = np.stack([j.origin.position for j in self.joints])
        self._axes = np.stack([j.axis for j in self.joints])
        self._axis_skew = np.stack([_skew(a) for a in self._axes])
        self._axis_skew2 = np.stack([k @ k for k in self._axis_skew])
        self._ee_R = ee_offset.orientation.to_matrix()
        self._ee_p = ee_offset.position
        self.q_min = np.array([j.q_min for j in self.joints])
        self.q_max = np.array([j.q_max for j in self.joints])
        self.v_max = np.array([j.v_max for j in self.joints])
        self.sphere_links = np.array([s.link for s in self.spheres], dtype=int)
        self.sphere_offsets = (
            np.stack([s.offset for s in self.spheres]) if self.spheres else np.zeros((0, 3))
        )
        self.sphere_radii = np.array([s.radius for s in self.spheres])
        # conservative reach bound: chain fully stretched from the first joint
        self.base_position = self.joints[0].origin.position
        self.max_reach = float(
            sum(np.linalg.norm(j.origin.position) for j in self.joints[1:])
            + np.linalg.norm(ee_offset.position)
        )
        # self-collision candidate pairs: spheres at least two links apart
        pairs = []
        for i in range(len(self.spheres)):
            for k in range(i + 1, len(self.spheres)):
                if abs(self.spheres[i].link - self.spheres[k].link) >= 2:
                    pairs.append((i, k))
        self.self_pairs = np.array(pairs, dtype=int).reshape(-1, 2)

    @property
    def dof(self) -> int:
        return len(self.joints)

    def clip(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.q_min, self.q_max)

    def within_limits(self, q: np.ndarray) -> bool:
        return bool(np.all(q >= self.q_min) and np.all(q <= self.q_max))

    @classmethod
    def from_dict(cls, d: dict) -> "RobotModel":
        if d.get("format") != 1:
            raise ValueError(f"unsupported robot model format: {d.get('format')!r}")
        if d.get("quaternion_order", "wxyz") != "wxyz":
            raise ValueError("robot model quaternions must be wxyz")
        joints = []
        for j in d["joints"]:
            joints.append(
                Joint(
                    origin=Pose(np.array(j["origin_p"]), Quat.from_array(j["origin_q"])),
                    axis=np.array(j["axis"]),
                    q_min=float(j["q_min"]),
                    q_max=float(j["q_max"]),
                    v_max=float(j["v_max"]),
                )
            )
        ee = d["ee"]
        spheres = [
            CollisionSphere(link=int(s["link"]), offset=np.array(s["center"]), radius=float(s["radius"]))
            for s in d.get("spheres", [])
        ]
        return cls(d.get("name", "robot"), joints, Pose(np.array(ee["p"]), Quat.from_array(ee["q"])), spheres)

    def to_dict(self) -> dict:
        return {
            "format": 1,
            "quaternion_order": "wxyz",
            "name": self.name,
            "joints": [
                {
                    "origin_p": list(j.origin.position),
                    "origin_q": list(j.origin.orientation.to_array()),
                    "axis": list(j.axis),
                    "q_min": j.q_min,
                    "q_max": j.q_max,
                    "v_max": j.v_max,
                }
                for j in self.joints
            ],
            "ee": {"p": list(self.ee_offset.position), "q": list(self.ee_offset.orientation.to_array())},
            "spheres": [
                {"link": int(s.link), "center": list(s.offset), "radius": s.radius} for s in self.spheres
            ],
        }

    @classmethod
    def load(cls, path: str | Path) -> "RobotModel":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def default_model() -> RobotModel:
    """The shipped redundant 7-DoF tabletop arm."""
    text = resources.files("pathfollow").joinpath("data", DEFAULT_MODEL_RESOURCE).read_text()
    return RobotModel.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Forward kinematics


def link_transforms_batch(m: RobotModel, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Frames of every joint plus the end-effector for a batch of configs.

    Q is (N, d); returns rotations (N, d+1, 3, 3) and positions (N, d+1, 3),
    base frame, end-effector last.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[1] != m.dof:
        raise ValueError(f"expected configs of shape (N, {m.dof}), got {Q.shape}")
    n = Q.shape[0]
    d = m.dof
    R = np.empty((n, d + 1, 3, 3))
    p = np.empty((n, d + 1, 3))
    r_acc = np.broadcast_to(np.eye(3), (n, 3, 3))
    p_acc = np.zeros((n, 3))
    eye = np.eye(3)
    for j in range(d):
        p_acc = p_acc + r_acc @ m._origin_p[j]
        r_acc = r_acc @ m._origin_R[j]
        theta = Q[:, j]
        rot = (
            eye
            + np.sin(theta)[:, None, None] * m._axis_skew[j]
            + (1.0 - np.cos(theta))[:, None, None] * m._axis_skew2[j]
        )
        r_acc = r_acc @ rot
        R[:, j] = r_acc
        p[:, j] = p_acc
    p[:, d] = p_acc + r_acc @ m._ee_p
    R[:, d] = r_acc @ m._ee_R
    return R, p


def link_transforms(m: RobotModel, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Single-config frames: rotations (d+1, 3, 3) and positions (d+1, 3)."""
    R, p = link_transforms_batch(m, np.asarray(q, dtype=float)[None, :])
    return R[0], p[0]


def fk(m: RobotModel, q: np.ndarray) -> list[Pose]:
    """Base-frame pose of every joint frame plus the end-effector (d+1 poses)."""
    R, p = link_transforms(m, q)
    return [Pose(p[i], Quat.from_matrix(R[i])) for i in range(m.dof + 1)]


def ee_pose(m: RobotModel, q: np.ndarray) -> Pose:
    R, p = link_transforms(m, q)
    return Pose(p[-1], Quat.from_matrix(R[-1]))


# ---------------------------------------------------------------------------
# Jacobians


def jacobian_batch(m: RobotModel, Q: np.ndarray, R=None, p=None) -> np.ndarray:
    """Geometric end-effector Jacobians (N, 6, d): linear rows then angular."""
    if R is None or p is None:
        R, p = link_transforms_batch(m, Q)
    n = R.shape[0]
    d = m.dof
    J = np.empty((n, 6, d))
    p_ee = p[:, d]
    for j in range(d):
        z = R[:, j] @ m._axes[j]
        J[:, :3, j] = np.cross(z, p_ee - p[:, j])
        J[:, 3:, j] = z
    return J


def jacobian(m: RobotModel, q: np.ndarray, locked=()) -> np.ndarray:
    """Geometric Jacobian 6 x d; `locked` joints have their columns removed."""
    J = jacobian_batch(m, np.asarray(q, dtype=float)[None, :])[0]
    if locked:
        keep = [j for j in range(m.dof) if j not in set(locked)]
        J = J[:, keep]
    return J


def point_jacobian(m: RobotModel, q: np.ndarray, link: int, point: np.ndarray,
                   R=None, p=None) -> np.ndarray:
    """Position Jacobian (3, d) of a base-frame point rigidly attached to `link`."""
    if R is None or p is None:
        R, p = link_transforms(m, q)
    J = np.zeros((3, m.dof))
    for j in range(link + 1):
        z = R[j] @ m._axes[j]
        J[:, j] = np.cross(z, point - p[j])
    return J


def pinv(J: np.ndarray) -> np.ndarray:
    """Exact Moore-Penrose pseudoinverse."""
    return np.linalg.pinv(J)


def damped_pinv(J: np.ndarray, lam: float) -> np.ndarray:
    """J^T (J J^T + lam^2 I)^-1."""
    jjt = J @ J.T
    jjt[np.diag_indices_from(jjt)] += lam * lam
    return np.linalg.solve(jjt, J).T


def null_projector(J: np.ndarray, rcond: float = 1e-10) -> np.ndarray:
    """Null-space projector I - J^+ J.

    Built from the SVD's kernel basis, so it is an exact orthogonal projector
    (idempotent, symmetric, J P = 0 to machine precision) and stays finite at
    singular configurations; rank is decided by `rcond` relative to the
    largest singular value.
    """
    _, s, vt = np.linalg.svd(J)
    rank = int(np.sum(s > rcond * max(float(s[0]), 1.0)))
    v_null = vt[rank:]
    return v_null.T @ v_null


def manipulability(m: RobotModel, q: np.ndarray) -> float:
    """det(J J^T); values below SINGULARITY_THRESHOLD flag a near-singularity."""
    J = jacobian(m, q)
    return max(float(np.linalg.det(J @ J.T)), 0.0)


def sphere_centers_batch(m: RobotModel, Q: np.ndarray, R=None, p=None) -> np.ndarray:
    """Base-frame collision-sphere centers (N, S, 3)."""
    if R is None or p is None:
        R, p = link_transforms_batch(m, Q)
    links = m.sphere_links
    # centers = p_link + R_link @ offset
    rot = R[:, links]  # (N, S, 3, 3)
    return p[:, links] + np.einsum("nsij,sj->nsi", rot, m.sphere_offsets)


def sphere_centers(m: RobotModel, q: np.ndarray) -> np.ndarray:
    return sphere_centers_batch(m, np.asarray(q, dtype=float)[None, :])[0]


# ---------------------------------------------------------------------------
# Inverse kinematics

IK_POS_TOL = 1e-4  # m
IK_ROT_TOL = 1e-3  # rad

# Per-iteration caps on the tracked pose error; clamping the target error
# keeps far-away DLS steps well-scaled.
IK_CAP_POS = 0.15
IK_CAP_ROT = 0.8


@dataclass(frozen=True)
class IkResult:
    q: np.ndarray
    success: bool
    reason: str  # "converged" | "max_iters" | "diverged"
    iterations: int
    pos_err: float
    rot_err: float


def rotvec_batch(r_rel: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotation vectors and angles for a batch of rotation matrices (K, 3, 3).

    The skew-part formula degenerates near pi; those rows fall back to
    quaternion extraction.
    """
    tr = np.einsum("kii->k", r_rel)
    s = 0.5 * np.stack(
        [
            r_rel[:, 2, 1] - r_rel[:, 1, 2],
            r_rel[:, 0, 2] - r_rel[:, 2, 0],
            r_rel[:, 1, 0] - r_rel[:, 0, 1],
        ],
        axis=1,
    )
    sn = np.linalg.norm(s, axis=1)
    cos = 0.5 * (tr - 1.0)
    theta = np.arctan2(sn, cos)
    out = np.zeros_like(s)
    ok = sn > 1e-10
    out[ok] = s[ok] / sn[ok, None] * theta[ok, None]
    for i in np.nonzero(~ok & (cos < 0.0))[0]:
        axis, angle = Quat.from_matrix(r_rel[i]).axis_angle()
        out[i] = axis * angle
        theta[i] = angle
    return out, theta


def ik_solve_batch(
    m: RobotModel,
    target: Pose,
    seeds: np.ndarray,
    *,
    pos_tol: float = IK_POS_TOL,
    rot_tol: float = IK_ROT_TOL,
    max_iters: int = 200,
    lam_init: float = 1e-3,
    lam_max: float = 1e-1,
    lam_min: float = 1e-5,
    abandon_after: int = 25,
):
    """Damped least-squares IK run in lockstep over a batch of seeds.

    Levenberg-Marquardt style damping per seed: an error-increasing step is
    rejected and the damping grows tenfold (capped at `lam_max`); accepted
    steps shrink it. Joint limits are enforced by clipping every iterate.
    Seeds are abandoned after `abandon_after` consecutive rejections.

    Returns (configs (K, d), success (K,), iterations (K,), pos_err, rot_err).
    """
    Q = np.clip(np.atleast_2d(np.asarray(seeds, dtype=float)), m.q_min, m.q_max)
    k = Q.shape[0]
    R_tgt = target.orientation.to_matrix()
    p_tgt = target.position
    lam = np.full(k, lam_init)
    streak = np.zeros(k, dtype=int)
    iters = np.zeros(k, dtype=int)
    success = np.zeros(k, dtype=bool)
    done = np.zeros(k, dtype=bool)

    R, p = link_transforms_batch(m, Q)
    dp = p_tgt[None, :] - p[:, -1]
    _, e_rot = rotvec_batch(R_tgt[None] @ np.transpose(R[:, -1], (0, 2, 1)))
    e_pos = np.linalg.norm(dp, axis=1)
    merit = e_pos + 0.17 * e_rot

    stalled = np.zeros(k, dtype=int)  # iterations without meaningful progress
    for it in range(max_iters):
        newly = ~done & (e_pos <= pos_tol) & (e_rot <= rot_tol)
        success |= newly
        done |= newly | (streak >= abandon_after) | (stalled >= 2 * abandon_after)
        act = np.nonzero(~done)[0]
        if act.size == 0:
            break
        iters[act] = it + 1
        Qa = Q[act]
        Ra, pa = link_transforms_batch(m, Qa)
        J = jacobian_batch(m, Qa, Ra, pa)
        dpa = p_tgt[None, :] - pa[:, -1]
        rva, rot_a = rotvec_batch(R_tgt[None] @ np.transpose(Ra[:, -1], (0, 2, 1)))
        pos_a = np.linalg.norm(dpa, axis=1)
        scale = np.minimum(
            1.0,
            np.minimum(
                IK_CAP_POS / np.maximum(pos_a, 1e-12), IK_CAP_ROT / np.maximum(rot_a, 1e-12)
            ),
        )
        e6 = np.concatenate([dpa, rva], axis=1) * scale[:, None]
        A = J @ np.transpose(J, (0, 2, 1))
        A[:, np.arange(6), np.arange(6)] += (lam[act] ** 2)[:, None]
        y = np.linalg.solve(A, e6[:, :, None])[:, :, 0]
        dq = np.einsum("kji,kj->ki", J, y)  # J^T y
        Qn = np.clip(Qa + dq, m.q_min, m.q_max)
        Rn, pn = link_transforms_batch(m, Qn)
        dpn = p_tgt[None, :] - pn[:, -1]
        _, rot_n = rotvec_batch(R_tgt[None] @ np.transpose(Rn[:, -1], (0, 2, 1)))
        pos_n = np.linalg.norm(dpn, axis=1)
        merit_n = pos_n + 0.17 * rot_n
        better = merit_n < merit[act]
        meaningful = merit_n < merit[act] - 1e-7
        acc = act[better]
        rej = act[~better]
        Q[acc] = Qn[better]
        e_pos[acc] = pos_n[better]
        e_rot[acc] = rot_n[better]
        merit[acc] = merit_n[better]
        lam[acc] = np.maximum(lam[acc] / 5.0, lam_min)
        streak[acc] = 0
        lam[rej] = np.minimum(lam[rej] * 10.0, lam_max)
        streak[rej] += 1
        stalled[act[meaningful]] = 0
        stalled[act[~meaningful]] += 1

    success |= ~done & (e_pos <= pos_tol) & (e_rot <= rot_tol)
    return Q, success, iters, e_pos, e_rot


def ik_solve(
    m: RobotModel,
    target: Pose,
    seed: np.ndarray,
    *,
    pos_tol: float = IK_POS_TOL,
    rot_tol: float = IK_ROT_TOL,
    max_iters: int = 200,
) -> IkResult:
    """Single-seed damped least-squares IK (see ik_solve_batch)."""
    Q, success, iters, e_pos, e_rot = ik_solve_batch(
        m, target, np.asarray(seed, dtype=float)[None, :],
        pos_tol=pos_tol, rot_tol=rot_tol, max_iters=max_iters,
    )
    if success[0]:
        return IkResult(Q[0], True, "converged", int(iters[0]), float(e_pos[0]), float(e_rot[0]))
    reason = "diverged" if not np.isfinite(e_pos[0]) else "max_iters"
    return IkResult(Q[0], False, reason, int(iters[0]), float(e_pos[0]), float(e_rot[0]))


def ik_sample(
    m: RobotModel,
    target: Pose,
    n: int,
    *,
    sdf=None,
    rng: np.random.Generator | None = None,
    attempts: int | None = None,
    pos_tol: float = IK_POS_TOL,
    rot_tol: float = IK_ROT_TOL,
    distinct_tol: float = 1e-6,
) -> list[np.ndarray]:
    """Up to `n` distinct IK solutions from uniform-random seeds.

    With an SDF attached, only collision-free solutions (world and self) are
    returned. The search runs through at most `attempts` seeds (default
    10*n), solved in batched chunks; fewer than `n` solutions may come back.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    budget = 10 * n if attempts is None else attempts
    out: list[np.ndarray] = []
    used = 0
    while used < budget and len(out) < n:
        chunk = min(max(2 * (n - len(out)), 32), budget - used)
        seeds = rng.uniform(m.q_min, m.q_max, size=(chunk, m.dof))
        used += chunk
        Q, success, _, _, _ = ik_solve_batch(m, target, seeds, pos_tol=pos_tol, rot_tol=rot_tol)
        for i in np.nonzero(success)[0]:
            q = Q[i]
            if sdf is not None:
                from .world import in_collision  # deferred: world depends on kinematics

                if in_collision(m, q, sdf):
                    continue
            if any(np.max(np.abs(q - prev)) <= distinct_tol for prev in out):
                continue
            out.append(q)
            if len(out) >= n:
                break
    return out
