import numpy as np
import pytest

from pathfollow import world as wd
from pathfollow.kinematics import RobotModel, sphere_centers
from pathfollow.world import OccupancyGrid, SDF, build_sdf, featurize, in_collision, self_collision, synth_tabletop


def _brute_force_unsigned(occ: np.ndarray, resolution: float) -> np.ndarray:
    """Distance from every voxel center to the nearest occupied center."""
    nx, ny, nz = occ.shape
    occ_idx = np.argwhere(occ)
    out = np.empty(occ.shape)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                d2 = np.sum((occ_idx - np.array([i, j, k])) ** 2, axis=1)
                out[i, j, k] = resolution * np.sqrt(d2.min())
    return out


def test_sdf_exact_vs_brute_force():
    rng = np.random.default_rng(0)
    for trial in range(3):
        occ = rng.random((20, 20, 20)) < 0.03
        if not occ.any():
            occ[4, 5, 6] = True
        grid = OccupancyGrid(np.zeros(3), 0.02, occ)
        sdf = build_sdf(grid)
        brute = _brute_force_unsigned(occ, 0.02)
        assert np.array_equal(np.maximum(sdf.values, 0.0), brute)


def test_sdf_single_voxel():
    occ = np.zeros((9, 9, 9), dtype=bool)
    occ[4, 4, 4] = True
    sdf = build_sdf(OccupancyGrid(np.zeros(3), 0.02, occ))
    assert sdf.values[5, 4, 4] == pytest.approx(0.02, abs=0.0)
    assert sdf.values[4, 4, 4] <= 0.0
    assert sdf.values[4, 5, 5] == pytest.approx(0.02 * np.sqrt(2.0), abs=1e-15)


def test_sdf_empty_and_full_sentinels():
    empty = build_sdf(OccupancyGrid.empty(dims=(8, 8, 8)))
    assert np.all(empty.values == wd.EMPTY_SDF_VALUE)
    occ = np.ones((4, 4, 4), dtype=bool)
    full = build_sdf(OccupancyGrid(np.zeros(3), 0.02, occ))
    assert np.all(full.values == -wd.EMPTY_SDF_VALUE)


def test_sdf_lipschitz_up_to_discretization():
    rng = np.random.default_rng(1)
    occ = rng.random((16, 16, 16)) < 0.05
    occ[2, 2, 2] = True
    grid = OccupancyGrid(np.zeros(3), 0.02, occ)
    sdf = build_sdf(grid)
    xs, ys, zs = grid.centers_1d()
    for _ in range(500):
        a = np.array([rng.integers(16) for _ in range(3)])
        b = np.array([rng.integers(16) for _ in range(3)])
        pa = np.array([xs[a[0]], ys[a[1]], zs[a[2]]])
        pb = np.array([xs[b[0]], ys[b[1]], zs[b[2]]])
        lhs = abs(sdf.values[tuple(a)] - sdf.values[tuple(b)])
        assert lhs <= np.linalg.norm(pa - pb) + 2 * grid.resolution + 1e-12


def test_query_trilinear_and_outside():
    occ = np.zeros((10, 10, 10), dtype=bool)
    occ[5, 5, 5] = True
    grid = OccupancyGrid(np.zeros(3), 0.02, occ)
    sdf = build_sdf(grid)
    xs, ys, zs = grid.centers_1d()
    # at voxel centers the interpolation is exact
    for idx in [(0, 0, 0), (5, 5, 5), (9, 3, 7)]:
        p = np.array([xs[idx[0]], ys[idx[1]], zs[idx[2]]])
        assert wd.query(sdf, p) == pytest.approx(sdf.values[idx], abs=1e-12)
    # midpoint between two centers is their average along that axis
    p_mid = np.array([(xs[2] + xs[3]) / 2, ys[5], zs[5]])
    expected = 0.5 * (sdf.values[2, 5, 5] + sdf.values[3, 5, 5])
    assert wd.query(sdf, p_mid) == pytest.approx(expected, abs=1e-12)
    # far outside: boundary value plus distance to the lattice
    outside = np.array([xs[-1] + 1.0, ys[5], zs[5]])
    assert wd.query(sdf, outside) == pytest.approx(sdf.values[9, 5, 5] + 1.0, abs=1e-9)


def test_collision_queries(model):
    sdf_empty = build_sdf(OccupancyGrid.empty())
    home = np.zeros(model.dof)
    assert not in_collision(model, home, sdf_empty)
    assert not self_collision(model, home)

    # a block occupying the whole region in front of the arm
    spec = {
        "format": 1,
        "boxes": [{"min": [0.5, -0.7, 0.2], "max": [1.2, 0.7, 1.2]}],
    }
    grid = OccupancyGrid.from_primitives(spec)
    sdf = build_sdf(grid)
    # brute-force oracle: some sphere center sits inside the block
    centers = sphere_centers(model, home)
    inside = (
        (centers[:, 0] >= 0.5)
        & (centers[:, 0] <= 1.2)
        & (centers[:, 2] >= 0.2)
        & (centers[:, 2] <= 1.2)
    )
    assert inside.any()
    assert in_collision(model, home, sdf)


def test_self_collision_excludes_adjacent_links(model):
    home = np.zeros(model.dof)
    centers = sphere_centers(model, home)
    links = model.sphere_links
    radii = model.sphere_radii
    overlap_adjacent = False
    for i in range(len(links)):
        for j in range(i + 1, len(links)):
            if abs(links[i] - links[j]) < 2:
                if np.linalg.norm(centers[i] - centers[j]) < radii[i] + radii[j]:
                    overlap_adjacent = True
    assert overlap_adjacent  # neighbors do overlap on this model
    assert not self_collision(model, home)  # but only non-adjacent pairs count


def test_collision_monotone_under_inflation(model, rng):
    sdf = build_sdf(synth_tabletop(3))
    doc = model.to_dict()
    for s in doc["spheres"]:
        s["radius"] += 0.02
    inflated = RobotModel.from_dict(doc)
    for _ in range(30):
        q = rng.uniform(model.q_min, model.q_max)
        if in_collision(model, q, sdf):
            assert in_collision(inflated, q, sdf)


def test_featurize_extremes():
    grid = OccupancyGrid.empty(dims=(16, 16, 8))
    assert np.array_equal(featurize(grid), np.zeros(32))
    occ = np.ones((16, 16, 8), dtype=bool)
    full = OccupancyGrid(grid.origin, grid.resolution, occ)
    assert np.array_equal(featurize(full), np.ones(32))


def test_featurize_half_block():
    dims = (16, 16, 8)
    occ = np.zeros(dims, dtype=bool)
    # first block is x[0:4), y[0:4), z[0:4): fill exactly half its voxels
    block = np.zeros(4 * 4 * 4, dtype=bool)
    block[: 4 * 4 * 2] = True
    occ[0:4, 0:4, 0:4] = block.reshape(4, 4, 4)
    grid = OccupancyGrid(np.zeros(3), 0.02, occ)
    feat = featurize(grid)
    assert feat[0] == pytest.approx(0.5, abs=1e-12)
    assert np.all(feat[1:] == 0.0)


def test_synth_tabletop_deterministic_and_bounded():
    a = synth_tabletop(11)
    b = synth_tabletop(11)
    assert np.array_equal(a.occ, b.occ)
    fracs = [synth_tabletop(seed).occupancy_fraction() for seed in range(8)]
    assert all(0.0 < f < 0.5 for f in fracs)


def test_synth_tabletop_has_slab():
    grid = synth_tabletop(4)
    layer_occ = grid.occ.mean(axis=(0, 1))
    peak = int(np.argmax(layer_occ))
    _, _, zs = grid.centers_1d()
    assert layer_occ[peak] > 0.05
    assert 0.3 <= zs[peak] <= 0.95


def test_grid_file_roundtrip(tmp_path):
    grid = synth_tabletop(2)
    p = tmp_path / "scene.grid"
    grid.save(p)
    again = OccupancyGrid.load(p)
    assert np.array_equal(grid.occ, again.occ)
    assert np.allclose(grid.origin, again.origin, atol=0.0)
    assert grid.resolution == again.resolution
    p2 = tmp_path / "scene2.grid"
    again.save(p2)
    assert p.read_bytes() == p2.read_bytes()


def test_grid_file_rejects_garbage(tmp_path):
    p = tmp_path / "nope.grid"
    p.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ValueError):
        OccupancyGrid.load(p)


def test_from_primitives_rasterization():
    spec = {
        "format": 1,
        "origin": [0.0, 0.0, 0.0],
        "resolution": 0.1,
        "dims": [10, 10, 10],
        "boxes": [{"min": [0.2, 0.2, 0.2], "max": [0.5, 0.5, 0.5]}],
        "cylinders": [{"center": [0.75, 0.75], "radius": 0.12, "zmin": 0.0, "zmax": 0.3}],
    }
    grid = OccupancyGrid.from_primitives(spec)
    xs, ys, zs = grid.centers_1d()
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            for k, z in enumerate(zs):
                in_box = 0.2 <= x <= 0.5 and 0.2 <= y <= 0.5 and 0.2 <= z <= 0.5
                in_cyl = (x - 0.75) ** 2 + (y - 0.75) ** 2 <= 0.12**2 and 0.0 <= z <= 0.3
                assert grid.occ[i, j, k] == (in_box or in_cyl)
