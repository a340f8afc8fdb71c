import numpy as np
import pytest

from pathfollow import objective as obj
from pathfollow.kinematics import RobotModel, ee_pose, ik_solve, null_projector, jacobian
from pathfollow.objective import (
    ConstraintReport,
    Trajectory,
    check_constraints,
    default_lam2,
    grad_u,
    u_obs,
    u_pose,
    u_smooth,
    u_total,
)
from pathfollow.paths import TargetPath
from pathfollow.se3 import Quat
from pathfollow.world import OccupancyGrid, build_sdf, synth_tabletop

from .conftest import planar_model


def _fk_path(model, configs) -> TargetPath:
    """Path that exactly matches the given configs' end-effector poses."""
    poses = [ee_pose(model, q) for q in configs]
    pos = np.stack([p.position for p in poses])
    qs = np.stack([p.orientation.to_array() for p in poses])
    return TargetPath(pos, qs)


@pytest.fixture(scope="module")
def empty_sdf():
    return build_sdf(OccupancyGrid.empty())


@pytest.fixture(scope="module")
def bent_configs(model):
    base = np.array([0.0, 0.5, 0.2, -1.2, 0.1, 0.6, 0.3])
    steps = np.full((8, model.dof), 0.0008)
    steps[0] = 0.0
    return base + np.cumsum(steps, axis=0)


def test_u_pose_exact_match(model, empty_sdf, bent_configs):
    path = _fk_path(model, bent_configs)
    traj = Trajectory(bent_configs)
    assert u_pose(model, traj, path) == pytest.approx(0.0, abs=1e-6)


def test_u_pose_ik_bound(model, empty_sdf, bent_configs):
    path = _fk_path(model, bent_configs)
    n = len(path)
    # re-solve each pose by IK from a perturbed seed: summed error stays
    # within the per-pose IK tolerance budget
    rng = np.random.default_rng(0)
    configs = np.empty_like(bent_configs)
    for i in range(n):
        res = ik_solve(model, path.pose(i), bent_configs[i] + rng.normal(0, 0.05, model.dof))
        assert res.success
        configs[i] = res.q
    total = u_pose(model, Trajectory(configs), path)
    assert total <= n * (1e-4 + 0.17 * 1e-3)


def test_u_pose_null_space_step_first_order(model, empty_sdf, bent_configs):
    path = _fk_path(model, bent_configs)
    configs = bent_configs.copy()
    for i in range(len(configs)):
        P = null_projector(jacobian(model, configs[i]))
        v = P @ np.ones(model.dof)
        v = v / np.linalg.norm(v) * 1e-3
        configs[i] = configs[i] + v
    assert u_pose(model, Trajectory(configs), path) <= 1e-3 * len(configs)


def test_u_pose_length_mismatch(model, bent_configs):
    path = _fk_path(model, bent_configs)
    with pytest.raises(ValueError):
        u_pose(model, Trajectory(bent_configs[:-1]), path)


def test_u_obs_hinge():
    # single-sphere robot whose sphere center lands at the joint frame
    doc = {
        "format": 1,
        "name": "probe",
        "joints": [
            {"origin_p": [0.35, 0.0, 0.35], "origin_q": [1, 0, 0, 0], "axis": [0, 0, 1],
             "q_min": -3.0, "q_max": 3.0, "v_max": 2.6}
        ],
        "ee": {"p": [0.0, 0.0, 0.0], "q": [1, 0, 0, 0]},
        "spheres": [{"link": 0, "center": [0.0, 0.0, 0.0], "radius": 0.01}],
    }
    probe = RobotModel.from_dict(doc)

    # empty world: zero cost
    sdf = build_sdf(OccupancyGrid.empty(origin=(0.0, 0.0, 0.0), dims=(40, 40, 40)))
    traj = Trajectory(np.zeros((3, 1)))
    assert u_obs(probe, traj, sdf) == 0.0

    # one occupied voxel exactly one voxel away from the sphere center:
    # sdf(center)=0.02, radius 0.01, clearance 0.05 -> hinge value 0.04
    res = 0.02
    xs = (np.arange(40) + 0.5) * res
    i = int(np.argmin(np.abs(xs - 0.35)))
    assert xs[i] == pytest.approx(0.35, abs=1e-12)
    j = k = i
    occ = np.zeros((40, 40, 40), dtype=bool)
    occ[i - 1, j, k] = True
    sdf_one = build_sdf(OccupancyGrid(np.zeros(3), res, occ))
    # place the sphere center exactly on a voxel center
    doc["joints"][0]["origin_p"] = [0.35, float(xs[j]), 0.35]
    probe2 = RobotModel.from_dict(doc)
    val = u_obs(probe2, Trajectory(np.zeros((1, 1))), sdf_one)
    assert val == pytest.approx(0.04, abs=1e-9)

    # exactly at the clearance boundary: sdf(center) - radius == clearance -> 0
    occ2 = np.zeros((40, 40, 40), dtype=bool)
    occ2[i - 3, j, k] = True  # 0.06 m away; 0.06 - 0.01 = clearance
    sdf_three = build_sdf(OccupancyGrid(np.zeros(3), res, occ2))
    assert u_obs(probe2, Trajectory(np.zeros((1, 1))), sdf_three) == pytest.approx(0.0, abs=1e-12)


def test_u_smooth():
    const = Trajectory(np.tile(np.arange(7.0), (5, 1)))
    assert u_smooth(const) == 0.0
    two = np.zeros((2, 7))
    two[1, 0] = 1.0
    assert u_smooth(Trajectory(two, dt=0.1)) == pytest.approx(50.0, abs=1e-12)
    assert u_smooth(Trajectory(two, dt=0.2)) == pytest.approx(12.5, abs=1e-12)
    # invariant to adding a constant offset to every config
    rng = np.random.default_rng(0)
    Q = rng.normal(size=(6, 7))
    off = rng.normal(size=7)
    assert u_smooth(Trajectory(Q)) == pytest.approx(u_smooth(Trajectory(Q + off)), rel=1e-12)


def test_u_total_composition(model, empty_sdf, bent_configs):
    path = _fk_path(model, bent_configs)
    traj = Trajectory(bent_configs)
    val = u_total(model, traj, path, empty_sdf)
    assert val.total == val.pose + val.lam1 * val.obs + val.lam2 * val.smooth
    assert val.lam1 == 10.0
    assert val.lam2 == pytest.approx(5.0 / (len(path) + 1), abs=0.0)
    assert default_lam2(99) == pytest.approx(0.05, abs=1e-15)
    zero = u_total(model, traj, path, empty_sdf, lam1=0.0, lam2=0.0)
    assert zero.total == zero.pose == u_pose(model, traj, path)


def _fd_grad(f, Q, h=1e-6):
    g = np.zeros_like(Q)
    for i in range(Q.shape[0]):
        for j in range(Q.shape[1]):
            qp, qm = Q.copy(), Q.copy()
            qp[i, j] += h
            qm[i, j] -= h
            g[i, j] = (f(qp) - f(qm)) / (2 * h)
    g[0] = 0.0
    return g


def _smooth_random_path(model, rng, n=10):
    base = np.array([0.7, 0.0, 0.7])
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    steps = dirs * 0.004
    steps[0] = 0.0
    pos = base + np.cumsum(steps, axis=0)
    qs = np.tile(Quat.from_axis_angle([0, 1, 0], 0.3).to_array(), (n, 1))
    return TargetPath(pos, qs)


def test_grad_matches_fd_pose_smooth(model, empty_sdf, rng):
    path = _smooth_random_path(model, rng)
    Q = rng.uniform(-0.5, 0.5, size=(10, model.dof))
    f = lambda q: u_total(model, Trajectory(q), path, empty_sdf).total
    g_an = grad_u(model, Trajectory(Q), path, empty_sdf)
    g_fd = _fd_grad(f, Q)
    scale = np.abs(g_fd).max()
    assert np.abs(g_an - g_fd).max() / scale <= 1e-4


def test_grad_matches_fd_obstacle(model, rng):
    path = _smooth_random_path(model, rng)
    sdf = build_sdf(synth_tabletop(3))
    Q = rng.uniform(-0.5, 0.5, size=(10, model.dof))
    f = lambda q: u_total(model, Trajectory(q), path, sdf).total
    g_an = grad_u(model, Trajectory(Q), path, sdf)
    g_fd = _fd_grad(f, Q)
    scale = np.abs(g_fd).max()
    assert np.abs(g_an - g_fd).max() / scale <= 5e-2


def test_grad_zero_row_and_minimum(model, empty_sdf, bent_configs):
    path = _fk_path(model, bent_configs)
    g = grad_u(model, Trajectory(bent_configs), path, empty_sdf)
    assert np.all(g[0] == 0.0)
    # constant matching trajectory on a constant path: at the minimum
    const = np.tile(bent_configs[0], (4, 1))
    cpath = _fk_path(model, const)
    g2 = grad_u(model, Trajectory(const), cpath, empty_sdf)
    assert np.abs(g2).max() < 1e-9


def test_check_constraints(model, empty_sdf):
    n = 5
    home = np.tile(np.array([0.0, 0.5, 0.2, -1.2, 0.1, 0.6, 0.3]), (n, 1))
    rep = check_constraints(model, Trajectory(home), empty_sdf)
    assert rep.violation_rate == 0.0
    assert rep.feasible

    # velocity: a 0.3 rad step at dt=0.1 exceeds 2.6 rad/s
    Q = home.copy()
    Q[3, 0] += 0.3
    rep_v = check_constraints(model, Trajectory(Q), empty_sdf)
    assert rep_v.velocity_limit[2] and rep_v.velocity_limit[3]
    assert not rep_v.feasible
    assert rep_v.violation_rate == pytest.approx(2 / n)

    # joint limit: just past q_max
    Q2 = home.copy()
    Q2[1, 0] = model.q_max[0] + 0.01
    rep_j = check_constraints(model, Trajectory(Q2), empty_sdf)
    assert rep_j.joint_limit[1]
    assert not rep_j.feasible

    # collision flag on an occupied world
    sdf = build_sdf(synth_tabletop(5))
    stretched = np.tile(np.array([0.0, 0.9, 0.0, 0.0, 0.0, 0.0, 0.0]), (n, 1))
    rep_c = check_constraints(model, Trajectory(stretched), sdf)
    assert rep_c.collision.dtype == bool

    # singularity flag on the stretched-out arm
    rep_s = check_constraints(model, Trajectory(np.zeros((n, model.dof))), empty_sdf)
    assert rep_s.singularity.all()
    # the soft singularity flag does not count toward the violation rate
    assert rep_s.violation_rate == 0.0


def test_trajectory_file_roundtrip():
    traj = Trajectory(np.arange(14.0).reshape(2, 7), dt=0.1)
    doc = traj.to_dict()
    again = Trajectory.from_dict(doc)
    assert np.array_equal(traj.configs, again.configs)
    assert traj.dt == again.dt
    with pytest.raises(ValueError):
        Trajectory.from_dict({"format": 9, "configs": [[0.0]]})
