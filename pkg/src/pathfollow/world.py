"""Occupancy grids, signed distance fields, collision queries, scene features.

Grids are axis-aligned voxel lattices; the signed distance field is the exact
Euclidean distance transform over voxel centers (positive in free space,
negative inside occupied space). Both are immutable after construction and
safe to query from multiple threads.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage

from .kinematics import RobotModel, sphere_centers

GRID_MAGIC = b"OGRD"
GRID_VERSION = 1

# Default workspace lattice: x [0.2, 1.2], y [-0.7, 0.7], z [0.2, 1.2], 2 cm voxels.
DEFAULT_ORIGIN = (0.2, -0.7, 0.2)
DEFAULT_RESOLUTION = 0.02
DEFAULT_DIMS = (50, 70, 50)

# Value used where the grid holds no occupied voxel at all.
EMPTY_SDF_VALUE = 10.0

FEATURE_BLOCKS = (4, 4, 2)  # x, y, z slabs; product is the 32-d feature


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    origin: np.ndarray  # (3,) lower corner, meters
    resolution: float
    occ: np.ndarray  # (nx, ny, nz) bool

    def __post_init__(self):
        o = np.array(self.origin, dtype=float).reshape(3)
        o.flags.writeable = False
        object.__setattr__(self, "origin", o)
        if self.resolution <= 0.0:
            raise ValueError("resolution must be positive")
        occ = np.asarray(self.occ, dtype=bool)
        occ.flags.writeable = False
        object.__setattr__(self, "occ", occ)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.occ.shape

    @classmethod
    def empty(cls, origin=DEFAULT_ORIGIN, resolution=DEFAULT_RESOLUTION, dims=DEFAULT_DIMS):
        return cls(np.array(origin), resolution, np.zeros(dims, dtype=bool))

    def centers_1d(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Voxel-center coordinates along each axis."""
        nx, ny, nz = self.dims
        r = self.resolution
        return (
            self.origin[0] + (np.arange(nx) + 0.5) * r,
            self.origin[1] + (np.arange(ny) + 0.5) * r,
            self.origin[2] + (np.arange(nz) + 0.5) * r,
        )

    def occupancy_fraction(self) -> float:
        return float(self.occ.mean())

    def save(self, path: str | Path) -> None:
        nx, ny, nz = self.dims
        header = (
            GRID_MAGIC
            + struct.pack("<I", GRID_VERSION)
            + struct.pack("<3d", *self.origin)
            + struct.pack("<d", self.resolution)
            + struct.pack("<3I", nx, ny, nz)
        )
        bits = np.packbits(self.occ.reshape(-1).astype(np.uint8))
        Path(path).write_bytes(header + bits.tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "OccupancyGrid":
        raw = Path(path).read_bytes()
        if raw[:4] != GRID_MAGIC:
            raise ValueError(f"{path}: not an occupancy grid file")
        (version,) = struct.unpack_from("<I", raw, 4)
        if version != GRID_VERSION:
            raise ValueError(f"{path}: unsupported grid version {version}")
        origin = struct.unpack_from("<3d", raw, 8)
        (resolution,) = struct.unpack_from("<d", raw, 32)
        nx, ny, nz = struct.unpack_from("<3I", raw, 40)
        n = nx * ny * nz
        bits = np.frombuffer(raw[52:], dtype=np.uint8)
        occ = np.unpackbits(bits, count=n).astype(bool).reshape(nx, ny, nz)
        return cls(np.array(origin), resolution, occ)

    @classmethod
    def from_primitives(cls, spec: dict) -> "OccupancyGrid":
        """Rasterize a JSON list of boxes and z-aligned cylinders."""
        if spec.get("format") != 1:
            raise ValueError(f"unsupported primitive file format: {spec.get('format')!r}")
        origin = np.array(spec.get("origin", DEFAULT_ORIGIN), dtype=float)
        resolution = float(spec.get("resolution", DEFAULT_RESOLUTION))
        dims = tuple(spec.get("dims", DEFAULT_DIMS))
        grid = cls(origin, resolution, np.zeros(dims, dtype=bool))
        occ = np.zeros(dims, dtype=bool)
        xs, ys, zs = grid.centers_1d()
        for box in spec.get("boxes", []):
            lo = np.asarray(box["min"], dtype=float)
            hi = np.asarray(box["max"], dtype=float)
            mx = (xs >= lo[0]) & (xs <= hi[0])
            my = (ys >= lo[1]) & (ys <= hi[1])
            mz = (zs >= lo[2]) & (zs <= hi[2])
            occ |= mx[:, None, None] & my[None, :, None] & mz[None, None, :]
        for cyl in spec.get("cylinders", []):
            cx, cy = (float(v) for v in cyl["center"])
            rad = float(cyl["radius"])
            disk = (xs[:, None] - cx) ** 2 + (ys[None, :] - cy) ** 2 <= rad * rad
            mz = (zs >= float(cyl["zmin"])) & (zs <= float(cyl["zmax"]))
            occ |= disk[:, :, None] & mz[None, None, :]
        return cls(origin, resolution, occ)


@dataclass(frozen=True, eq=False)
class SDF:
    """Signed distances (m) on the grid's voxel-center lattice."""

    origin: np.ndarray
    resolution: float
    values: np.ndarray  # (nx, ny, nz) float64

    def __post_init__(self):
        o = np.array(self.origin, dtype=float).reshape(3)
        o.flags.writeable = False
        object.__setattr__(self, "origin", o)
        v = np.asarray(self.values, dtype=float)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    @cached_property
    def _upper(self) -> np.ndarray:
        return np.array([d - 1.0 for d in self.dims])

    def query(self, points: np.ndarray) -> np.ndarray:
        """Trilinear interpolation at the given points (..., 3).

        Outside the center lattice the value is the clamped boundary value
        plus the Euclidean distance to the lattice, so far-away queries keep
        growing instead of flattening out.
        """
        p = np.asarray(points, dtype=float)
        squeeze = p.ndim == 1
        p = np.atleast_2d(p)
        g = (p - self.origin) / self.resolution - 0.5
        gc = np.clip(g, 0.0, self._upper)
        outside = np.linalg.norm(g - gc, axis=-1) * self.resolution

        i0 = np.minimum(gc.astype(int), (self._upper - 1.0).astype(int))
        i0 = np.maximum(i0, 0)
        f = gc - i0
        x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
        v = self.values
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        c000 = v[x0, y0, z0]
        c100 = v[x0 + 1, y0, z0]
        c010 = v[x0, y0 + 1, z0]
        c110 = v[x0 + 1, y0 + 1, z0]
        c001 = v[x0, y0, z0 + 1]
        c101 = v[x0 + 1, y0, z0 + 1]
        c011 = v[x0, y0 + 1, z0 + 1]
        c111 = v[x0 + 1, y0 + 1, z0 + 1]
        c00 = c000 * (1 - fx) + c100 * fx
        c10 = c010 * (1 - fx) + c110 * fx
        c01 = c001 * (1 - fx) + c101 * fx
        c11 = c011 * (1 - fx) + c111 * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        out = c0 * (1 - fz) + c1 * fz + outside
        return out[0] if squeeze else out.reshape(points.shape[:-1])


def build_sdf(grid: OccupancyGrid) -> SDF:
    """Exact signed Euclidean distance transform over voxel centers."""
    occ = grid.occ
    if not occ.any():
        values = np.full(grid.dims, EMPTY_SDF_VALUE)
    elif occ.all():
        values = np.full(grid.dims, -EMPTY_SDF_VALUE)
    else:
        d_occ = ndimage.distance_transform_edt(~occ)
        d_free = ndimage.distance_transform_edt(occ)
        values = (d_occ - d_free) * grid.resolution
    return SDF(grid.origin, grid.resolution, values)


def query(sdf: SDF, point) -> float:
    return float(sdf.query(np.asarray(point, dtype=float)))


def self_collision(m: RobotModel, q: np.ndarray) -> bool:
    """Any two collision spheres on non-adjacent links overlapping."""
    if len(m.self_pairs) == 0:
        return False
    c = sphere_centers(m, q)
    i, k = m.self_pairs[:, 0], m.self_pairs[:, 1]
    gap = np.linalg.norm(c[i] - c[k], axis=1)
    return bool(np.any(gap < m.sphere_radii[i] + m.sphere_radii[k]))


def in_collision(m: RobotModel, q: np.ndarray, sdf: SDF) -> bool:
    """World collision (sphere center closer to obstacles than its radius) or
    self collision."""
    c = sphere_centers(m, q)
    if bool(np.any(sdf.query(c) < m.sphere_radii)):
        return True
    return self_collision(m, q)


def featurize(grid: OccupancyGrid) -> np.ndarray:
    """Pooled-occupancy scene feature: per-block occupied fraction.

    The lattice is split into 4 x 4 x 2 blocks (x-major, then y, then z);
    each entry is that block's occupied-voxel fraction, giving a fixed
    32-vector in [0, 1].
    """
    bx, by, bz = FEATURE_BLOCKS
    nx, ny, nz = grid.dims
    ex = [(i * nx) // bx for i in range(bx + 1)]
    ey = [(i * ny) // by for i in range(by + 1)]
    ez = [(i * nz) // bz for i in range(bz + 1)]
    out = np.empty(bx * by * bz)
    idx = 0
    for i in range(bx):
        for j in range(by):
            for k in range(bz):
                block = grid.occ[ex[i]:ex[i + 1], ey[j]:ey[j + 1], ez[k]:ez[k + 1]]
                out[idx] = block.mean() if block.size else 0.0
                idx += 1
    return out


def synth_tabletop(seed: int) -> OccupancyGrid:
    """Random tabletop scene: one table slab plus 1-5 boxes/cylinders on it.

    Deterministic per seed. Table top height is drawn from [0.4, 0.9] m.
    """
    rng = np.random.default_rng(seed)
    top = rng.uniform(0.4, 0.9)
    thickness = 0.04
    cx = rng.uniform(0.55, 0.95)
    cy = rng.uniform(-0.2, 0.2)
    hx = rng.uniform(0.15, 0.3)
    hy = rng.uniform(0.2, 0.4)
    spec: dict = {
        "format": 1,
        "origin": list(DEFAULT_ORIGIN),
        "resolution": DEFAULT_RESOLUTION,
        "dims": list(DEFAULT_DIMS),
        "boxes": [{"min": [cx - hx, cy - hy, top - thickness], "max": [cx + hx, cy + hy, top]}],
        "cylinders": [],
    }
    for _ in range(int(rng.integers(1, 6))):
        ox = rng.uniform(cx - hx + 0.05, cx + hx - 0.05)
        oy = rng.uniform(cy - hy + 0.05, cy + hy - 0.05)
        height = rng.uniform(0.05, 0.25)
        if rng.random() < 0.5:
            ex = rng.uniform(0.02, 0.06)
            ey = rng.uniform(0.02, 0.06)
            spec["boxes"].append(
                {"min": [ox - ex, oy - ey, top], "max": [ox + ex, oy + ey, top + height]}
            )
        else:
            rad = rng.uniform(0.02, 0.05)
            spec["cylinders"].append(
                {"center": [ox, oy], "radius": rad, "zmin": top, "zmax": top + height}
            )
    return OccupancyGrid.from_primitives(spec)
