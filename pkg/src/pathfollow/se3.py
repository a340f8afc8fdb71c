"""SE(3) poses, quaternion algebra, 6D rotation encoding, and pose metrics.

Quaternions are stored scalar-first (w, x, y, z) throughout the package and
in every file format. All types are immutable values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Weight applied to the rotational error (radians) relative to the
# positional error (meters) when combining both into one pose distance.
ROTATION_WEIGHT = 0.17

_ANTIPODAL_EPS = 1e-6


@dataclass(frozen=True, eq=False)
class Quat:
    """Unit quaternion, scalar-first (w, x, y, z)."""

    w: float
    x: float
    y: float
    z: float

    @staticmethod
    def identity() -> "Quat":
        return Quat(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_array(a) -> "Quat":
        w, x, y, z = (float(v) for v in a)
        return Quat(w, x, y, z)

    @staticmethod
    def from_axis_angle(axis, angle: float) -> "Quat":
        ax = np.asarray(axis, dtype=float)
        n = np.linalg.norm(ax)
        if n == 0.0:
            return Quat.identity()
        half = 0.5 * float(angle)
        s = math.sin(half) / n
        return Quat(math.cos(half), ax[0] * s, ax[1] * s, ax[2] * s)

    @staticmethod
    def from_matrix(r) -> "Quat":
        """Rotation matrix to quaternion (largest-pivot branch)."""
        r = np.asarray(r, dtype=float)
        t = r[0, 0] + r[1, 1] + r[2, 2]
        if t > 0.0:
            s = math.sqrt(t + 1.0) * 2.0
            w = 0.25 * s
            x = (r[2, 1] - r[1, 2]) / s
            y = (r[0, 2] - r[2, 0]) / s
            z = (r[1, 0] - r[0, 1]) / s
        elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
            s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
            w = (r[2, 1] - r[1, 2]) / s
            x = 0.25 * s
            y = (r[0, 1] + r[1, 0]) / s
            z = (r[0, 2] + r[2, 0]) / s
        elif r[1, 1] >= r[2, 2]:
            s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
            w = (r[0, 2] - r[2, 0]) / s
            x = (r[0, 1] + r[1, 0]) / s
            y = 0.25 * s
            z = (r[1, 2] + r[2, 1]) / s
        else:
            s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
            w = (r[1, 0] - r[0, 1]) / s
            x = (r[0, 2] + r[2, 0]) / s
            y = (r[1, 2] + r[2, 1]) / s
            z = 0.25 * s
        return Quat(w, x, y, z).normalized()

    def normalized(self) -> "Quat":
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if n == 0.0:
            raise ValueError("cannot normalize zero quaternion")
        return Quat(self.w / n, self.x / n, self.y / n, self.z / n)

    def norm(self) -> float:
        return math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)

    def conjugate(self) -> "Quat":
        return Quat(self.w, -self.x, -self.y, -self.z)

    def mul(self, other: "Quat") -> "Quat":
        """Hamilton product self * other."""
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Quat(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def dot(self, other: "Quat") -> float:
        return self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z

    def rotate(self, v) -> np.ndarray:
        return self.to_matrix() @ np.asarray(v, dtype=float)

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        xx, yy, zz = x * x, y * y, z * z
        xy, xz, yz = x * y, x * z, y * z
        wx, wy, wz = w * x, w * y, w * z
        return np.array(
            [
                [1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy)],
                [2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx)],
                [2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy)],
            ]
        )

    def to_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def axis_angle(self) -> tuple[np.ndarray, float]:
        """Rotation axis (unit) and angle in [0, pi]; axis is zero for identity."""
        q = self if self.w >= 0.0 else Quat(-self.w, -self.x, -self.y, -self.z)
        vn = math.sqrt(q.x**2 + q.y**2 + q.z**2)
        if vn < 1e-12:
            return np.zeros(3), 0.0
        angle = 2.0 * math.atan2(vn, q.w)
        return np.array([q.x, q.y, q.z]) / vn, angle

    def __repr__(self) -> str:
        return f"Quat(w={self.w:.6g}, x={self.x:.6g}, y={self.y:.6g}, z={self.z:.6g})"


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: position (m) plus unit-quaternion orientation."""

    position: np.ndarray
    orientation: Quat

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        p.flags.writeable = False
        object.__setattr__(self, "position", p)
        # normalize only off-unit inputs; exact negations must stay exact
        if abs(self.orientation.norm() - 1.0) > 1e-12:
            object.__setattr__(self, "orientation", self.orientation.normalized())

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), Quat.identity())

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 transform."""
        t = np.eye(4)
        t[:3, :3] = self.orientation.to_matrix()
        t[:3, 3] = self.position
        return t

    def __repr__(self) -> str:
        p = self.position
        return f"Pose(p=[{p[0]:.4g}, {p[1]:.4g}, {p[2]:.4g}], q={self.orientation!r})"


def compose(a: Pose, b: Pose) -> Pose:
    """Frame composition a ∘ b."""
    return Pose(a.position + a.orientation.rotate(b.position), a.orientation.mul(b.orientation))


def inverse(a: Pose) -> Pose:
    qi = a.orientation.conjugate()
    return Pose(-qi.rotate(a.position), qi)


def relative(a: Pose, b: Pose) -> Pose:
    """Pose of b expressed in a's frame: inverse(a) ∘ b."""
    return compose(inverse(a), b)


def pos_error(a: Pose, b: Pose) -> float:
    """Euclidean distance between positions (m)."""
    return float(np.linalg.norm(a.position - b.position))


def rot_error(a: Pose, b: Pose) -> float:
    """Angle between orientations (rad), sign-invariant: 2*acos(|<qa, qb>|)."""
    d = abs(a.orientation.dot(b.orientation))
    return 2.0 * math.acos(min(1.0, max(-1.0, d)))


def pose_distance(a: Pose, b: Pose) -> float:
    """Positional error plus 0.17-weighted rotational error."""
    return pos_error(a, b) + ROTATION_WEIGHT * rot_error(a, b)


def slerp(a: Quat, b: Quat, t: float) -> Quat:
    """Spherical linear interpolation along the shortest arc.

    Near-antipodal inputs (|<a,b>| < 1e-6) have no unique shortest arc; we
    deterministically route through the fixed orthogonal companion
    (-z, y, -x, w) of a.
    """
    d = a.dot(b)
    if d < 0.0:
        b = Quat(-b.w, -b.x, -b.y, -b.z)
        d = -d
    if d < _ANTIPODAL_EPS:
        c = Quat(-a.z, a.y, -a.x, a.w)  # orthogonal to a by construction
        ang = math.pi * t
        ca, sa = math.cos(ang), math.sin(ang)
        return Quat(
            ca * a.w + sa * c.w, ca * a.x + sa * c.x, ca * a.y + sa * c.y, ca * a.z + sa * c.z
        ).normalized()
    if d > 1.0 - 1e-12:
        # nearly identical: nlerp is exact to first order
        out = Quat(
            a.w + t * (b.w - a.w), a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), a.z + t * (b.z - a.z)
        )
        return out.normalized()
    omega = math.acos(min(1.0, d))
    so = math.sin(omega)
    ka = math.sin((1.0 - t) * omega) / so
    kb = math.sin(t * omega) / so
    return Quat(
        ka * a.w + kb * b.w, ka * a.x + kb * b.x, ka * a.y + kb * b.y, ka * a.z + kb * b.z
    ).normalized()


def quat_to_rot6d(q: Quat) -> np.ndarray:
    """First two columns of the rotation matrix, stacked column-first."""
    r = q.to_matrix()
    return np.concatenate([r[:, 0], r[:, 1]])


def rot6d_from_matrix(r: np.ndarray) -> np.ndarray:
    return np.concatenate([r[:, 0], r[:, 1]])


def matrix_from_rot6d(v) -> np.ndarray:
    """Gram-Schmidt reconstruction of a rotation matrix from two columns."""
    v = np.asarray(v, dtype=float)
    a1, a2 = v[:3], v[3:6]
    b1 = a1 / np.linalg.norm(a1)
    a2p = a2 - np.dot(b1, a2) * b1
    b2 = a2p / np.linalg.norm(a2p)
    b3 = np.cross(b1, b2)
    return np.column_stack([b1, b2, b3])


def rot6d_to_quat(v) -> Quat:
    return Quat.from_matrix(matrix_from_rot6d(v))


def to_repr9(p: Pose) -> np.ndarray:
    """Network pose representation: position followed by 6D rotation."""
    return np.concatenate([p.position, quat_to_rot6d(p.orientation)])


def from_repr9(v) -> Pose:
    v = np.asarray(v, dtype=float)
    return Pose(v[:3], rot6d_to_quat(v[3:9]))


def random_quat(rng: np.random.Generator) -> Quat:
    """Uniform random rotation (normalized 4-d Gaussian)."""
    v = rng.normal(size=4)
    v /= np.linalg.norm(v)
    return Quat(v[0], v[1], v[2], v[3])


def quats_to_matrices(q: np.ndarray) -> np.ndarray:
    """Batch wxyz quaternions (N, 4) to rotation matrices (N, 3, 3)."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    out = np.empty((q.shape[0], 3, 3))
    out[:, 0, 0] = 1 - 2 * (y * y + z * z)
    out[:, 0, 1] = 2 * (x * y - w * z)
    out[:, 0, 2] = 2 * (x * z + w * y)
    out[:, 1, 0] = 2 * (x * y + w * z)
    out[:, 1, 1] = 1 - 2 * (x * x + z * z)
    out[:, 1, 2] = 2 * (y * z - w * x)
    out[:, 2, 0] = 2 * (x * z - w * y)
    out[:, 2, 1] = 2 * (y * z + w * x)
    out[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def relative_angles(R_a: np.ndarray, R_b: np.ndarray) -> np.ndarray:
    """Batch rotation angle between matrix pairs, in [0, pi].

    Computed through the scalar part of the relative quaternion, matching
    rot_error's 2*acos(|<qa, qb>|) formulation.
    """
    tr = np.einsum("nij,nij->n", R_a, R_b)  # trace(R_a^T R_b)
    w_abs = 0.5 * np.sqrt(np.maximum(tr + 1.0, 0.0))
    return 2.0 * np.arccos(np.clip(w_abs, 0.0, 1.0))
