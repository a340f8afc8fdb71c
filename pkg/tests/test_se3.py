import math

import numpy as np
import pytest

from pathfollow import se3
from pathfollow.se3 import Pose, Quat

from .conftest import random_pose


def test_pos_error_examples():
    a = Pose(np.zeros(3), Quat.identity())
    assert se3.pos_error(a, a) == 0.0
    b = Pose(np.array([3.0, 4.0, 0.0]), Quat.identity())
    assert se3.pos_error(a, b) == pytest.approx(5.0, abs=1e-12)
    c = Pose(np.array([0.2, 0.0, 0.5]), Quat.identity())
    d = Pose(np.array([0.2, 0.05, 0.5]), Quat.identity())
    assert se3.pos_error(c, d) == pytest.approx(0.05, abs=1e-12)
    assert se3.pos_error(b, a) == se3.pos_error(a, b)


def test_rot_error_examples():
    ident = Pose(np.zeros(3), Quat.identity())
    assert se3.rot_error(ident, ident) == 0.0
    z180 = Pose(np.zeros(3), Quat(0.0, 0.0, 0.0, 1.0))
    assert se3.rot_error(ident, z180) == pytest.approx(math.pi, abs=1e-12)
    z90 = Pose(np.zeros(3), Quat(0.70711, 0.0, 0.0, 0.70711))
    assert se3.rot_error(ident, z90) == pytest.approx(math.pi / 2, abs=1e-9)


def test_rot_error_sign_invariance():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        a, b = random_pose(rng), random_pose(rng)
        q = b.orientation
        b_flip = Pose(b.position, Quat(-q.w, -q.x, -q.y, -q.z))
        assert se3.rot_error(a, b) == se3.rot_error(a, b_flip)


def test_pose_distance():
    ident = Pose(np.zeros(3), Quat.identity())
    assert se3.pose_distance(ident, ident) == 0.0
    moved = Pose(np.array([0.1, 0.0, 0.0]), Quat.from_axis_angle([0, 0, 1], 1.0))
    assert se3.pose_distance(ident, moved) == pytest.approx(0.1 + 0.17 * 1.0, abs=1e-12)
    rot_pi = Pose(np.zeros(3), Quat(0.0, 1.0, 0.0, 0.0))
    assert se3.pose_distance(ident, rot_pi) == pytest.approx(0.17 * math.pi, abs=1e-12)
    assert se3.ROTATION_WEIGHT == 0.17


def test_pose_distance_pseudometric():
    rng = np.random.default_rng(1)
    for _ in range(300):
        a, b, c = (random_pose(rng) for _ in range(3))
        assert se3.pose_distance(a, b) == se3.pose_distance(b, a)
        assert se3.pose_distance(a, c) <= se3.pose_distance(a, b) + se3.pose_distance(b, c) + 1e-9


def test_slerp_endpoints_and_midpoint():
    a = Quat.identity()
    b = Quat.from_axis_angle([0, 0, 1], math.pi / 2)
    assert abs(se3.slerp(a, b, 0.0).dot(a)) == pytest.approx(1.0, abs=1e-12)
    assert abs(se3.slerp(a, b, 1.0).dot(b)) == pytest.approx(1.0, abs=1e-12)
    mid = se3.slerp(a, b, 0.5)
    expected = Quat.from_axis_angle([0, 0, 1], math.pi / 4)
    assert abs(mid.dot(expected)) == pytest.approx(1.0, abs=1e-12)
    # a == b: constant for any t
    for t in (0.0, 0.3, 0.9):
        assert abs(se3.slerp(b, b, t).dot(b)) == pytest.approx(1.0, abs=1e-12)


def test_slerp_chain_monotone_and_total():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a, b = se3.random_quat(rng), se3.random_quat(rng)
        pa = Pose(np.zeros(3), a)
        total = se3.rot_error(pa, Pose(np.zeros(3), b))
        ts = np.linspace(0.0, 1.0, 17)
        quats = [se3.slerp(a, b, t) for t in ts]
        acc = 0.0
        prev_acc = -1.0
        for q0, q1 in zip(quats, quats[1:]):
            step = se3.rot_error(Pose(np.zeros(3), q0), Pose(np.zeros(3), q1))
            acc += step
            assert acc >= prev_acc
            prev_acc = acc
        assert acc == pytest.approx(total, abs=1e-6)


def test_slerp_antipodal_fallback_deterministic():
    a = Quat.identity()
    b = Quat(-1.0 + 1e-9, 0.0, 0.0, 0.0).normalized()  # same rotation as a, antipodal sign
    out1 = se3.slerp(a, b, 0.25)
    out2 = se3.slerp(a, b, 0.25)
    assert out1.to_array() == pytest.approx(out2.to_array(), abs=0.0)
    # endpoints still map to the inputs up to sign
    assert abs(se3.slerp(a, b, 0.0).dot(a)) == pytest.approx(1.0, abs=1e-9)
    assert abs(se3.slerp(a, b, 1.0).dot(b)) == pytest.approx(1.0, abs=1e-9)


def _angle_between(q1: Quat, q2: Quat) -> float:
    # small-angle-accurate: 2 * chordal quaternion distance (up to sign)
    a1, a2 = q1.to_array(), q2.to_array()
    return 2.0 * min(np.linalg.norm(a1 - a2), np.linalg.norm(a1 + a2))


def test_rot6d_roundtrip():
    rng = np.random.default_rng(3)
    for _ in range(200):
        q = se3.random_quat(rng)
        q2 = se3.rot6d_to_quat(se3.quat_to_rot6d(q))
        assert _angle_between(q, q2) < 1e-9


def test_repr9_fixed_point():
    rng = np.random.default_rng(4)
    for _ in range(50):
        p = random_pose(rng)
        v = se3.to_repr9(p)
        v2 = se3.to_repr9(se3.from_repr9(v))
        assert np.allclose(v, v2, atol=1e-12)


def test_compose_inverse_relative():
    rng = np.random.default_rng(5)
    ident = Pose.identity()
    for _ in range(100):
        a, b = random_pose(rng), random_pose(rng)
        rel_aa = se3.relative(a, a)
        assert np.linalg.norm(rel_aa.position) < 1e-12
        assert _angle_between(rel_aa.orientation, ident.orientation) < 1e-9
        assert np.allclose(se3.compose(ident, b).position, b.position)
        back = se3.compose(a, se3.relative(a, b))
        assert np.linalg.norm(back.position - b.position) < 1e-9
        assert _angle_between(back.orientation, b.orientation) < 1e-9


def test_quat_invariants():
    rng = np.random.default_rng(6)
    for _ in range(100):
        q = se3.random_quat(rng)
        assert q.norm() == pytest.approx(1.0, abs=1e-9)
        r = q.to_matrix()
        assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)
        q2 = Quat.from_matrix(r)
        assert abs(q.dot(q2)) == pytest.approx(1.0, abs=1e-9)


def test_relative_angles_matches_rot_error():
    rng = np.random.default_rng(7)
    qa = [se3.random_quat(rng) for _ in range(50)]
    qb = [se3.random_quat(rng) for _ in range(50)]
    Ra = np.stack([q.to_matrix() for q in qa])
    Rb = np.stack([q.to_matrix() for q in qb])
    angles = se3.relative_angles(Ra, Rb)
    for i in range(50):
        direct = se3.rot_error(Pose(np.zeros(3), qa[i]), Pose(np.zeros(3), qb[i]))
        assert angles[i] == pytest.approx(direct, abs=1e-7)
