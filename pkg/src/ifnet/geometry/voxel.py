"""Binary occupancy grids over the canonical domain.

Cell (i, j, k) of an N-grid covers the half-open box starting at
(-0.5 + i/N, ...) with side 1/N; its center sits at (-0.5 + (i+0.5)/N, ...).
The file format serializes x-fastest, while the in-memory array is indexed
data[ix, iy, iz].
"""

import struct

import numpy as np

IFVX_MAGIC = b"IFVX"
IFVX_VERSION = 1


class VoxelGrid:
    def __init__(self, data):
        data = np.ascontiguousarray(data, dtype=np.uint8)
        if data.ndim != 3 or len(set(data.shape)) != 1:
            raise ValueError("voxel data must be a cube")
        if data.shape[0] < 2:
            raise ValueError("resolution must be >= 2")
        if data.max(initial=0) > 1:
            raise ValueError("occupancy values must be 0 or 1")
        self.data = data

    @property
    def n(self):
        return self.data.shape[0]

    def count(self):
        return int(self.data.sum())

    def cell_centers(self):
        """Centers of all N^3 cells, ordered to match data.reshape(-1)."""
        ax = cell_axis(self.n)
        x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
        return np.stack([x, y, z], axis=-1).reshape(-1, 3)


def cell_axis(n):
    return -0.5 + (np.arange(n) + 0.5) / n


def save_voxels(path, grid):
    with open(path, "wb") as f:
        f.write(IFVX_MAGIC)
        f.write(struct.pack("<II", IFVX_VERSION, grid.n))
        f.write(np.ascontiguousarray(grid.data.transpose(2, 1, 0)).tobytes())


def load_voxels(path):
    with open(path, "rb") as f:
        if f.read(4) != IFVX_MAGIC:
            raise ValueError(f"{path}: not a voxel grid file")
        version, n = struct.unpack("<II", f.read(8))
        if version != IFVX_VERSION:
            raise ValueError(f"{path}: unsupported voxel format version {version}")
        raw = f.read(n * n * n)
        if len(raw) != n * n * n:
            raise ValueError(f"{path}: truncated voxel data")
    data = np.frombuffer(raw, dtype=np.uint8).reshape(n, n, n).transpose(2, 1, 0)
    return VoxelGrid(data.copy())


def voxelize_points(points, n):
    """Mark every cell containing at least one point.

    Points on internal cell boundaries go to the higher-index cell; points on
    the domain boundary are clamped into the closed cube first.
    """
    points = np.clip(np.asarray(points, dtype=np.float64), -0.5, 0.5)
    data = np.zeros((n, n, n), dtype=np.uint8)
    if len(points):
        idx = np.floor((points + 0.5) * n).astype(np.int64)
        np.clip(idx, 0, n - 1, out=idx)
        data[idx[:, 0], idx[:, 1], idx[:, 2]] = 1
    return VoxelGrid(data)


def voxelize_mesh(mesh, n, seed=0):
    """Occupancy of each cell center against a watertight mesh."""
    from .occupancy import occupancy_oracle
    grid = VoxelGrid(np.zeros((n, n, n), dtype=np.uint8))
    labels = occupancy_oracle(mesh, grid.cell_centers(), seed=seed)
    return VoxelGrid(labels.reshape(n, n, n))
