"""Dense occupancy evaluation and isosurface extraction.

The trained model is evaluated at every cell center of an output grid
(encode once, decode in chunks), and the resulting probability field is
meshed with marching cubes at the iso threshold.  `reconstruct` wraps
the field in one layer of empty cells first so shapes touching the
domain wall still come out closed.
"""

import struct

import numpy as np

from . import model as mdl
from .geometry import TriMesh
from .kernels import marching_cubes_core

FIELD_MAGIC = b"IFFD"
FIELD_VERSION = 1

# cap on one chunk's feature block; protects against runaway widths
FEATURE_BUDGET = 256 * 1024 * 1024


class MemoryBudgetError(MemoryError):
    """A chunk would allocate more than the feature budget."""


class OccupancyField:
    """Probabilities on an M-grid aligned with the canonical domain."""

    def __init__(self, values):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        if self.values.ndim != 3 or len(set(self.values.shape)) != 1:
            raise ValueError("field must be a cube")
        if self.values.shape[0] < 2:
            raise ValueError("field resolution must be >= 2")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ValueError("field values must lie in [0, 1]")

    @property
    def m(self):
        return self.values.shape[0]

    def cell_centers(self):
        axis = -0.5 + (np.arange(self.m) + 0.5) / self.m
        gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)


class MesherConfig:
    def __init__(self, resolution=128, threshold=0.5, chunk=8192):
        self.resolution = int(resolution)
        self.threshold = float(threshold)
        self.chunk = int(chunk)
        if self.resolution < 2:
            raise ValueError("output resolution must be >= 2")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.chunk < 1:
            raise ValueError("chunk must be positive")

    def to_dict(self):
        return {"resolution": self.resolution, "threshold": self.threshold,
                "chunk": self.chunk}


def evaluate_field(params, x, cfg):
    """Decode the model at all M^3 cell centers -> OccupancyField."""
    width = params.decoder_width
    need = cfg.chunk * width * np.dtype(params.dtype).itemsize
    if need > FEATURE_BUDGET:
        raise MemoryBudgetError(
            f"a chunk of {cfg.chunk} points needs {need >> 20} MiB of "
            f"features; lower MesherConfig.chunk")
    grids = mdl.encode(params, x)
    m = cfg.resolution
    centers = _centers(m)
    values = np.empty(m * m * m, dtype=np.float64)
    for lo in range(0, len(centers), cfg.chunk):
        pts = centers[lo:lo + cfg.chunk]
        feats = mdl.extract_features(grids, pts, params.query)
        probs, _ = mdl.decode(params, feats)
        values[lo:lo + len(pts)] = probs.data
    return OccupancyField(values.reshape(m, m, m))


def _centers(m):
    axis = -0.5 + (np.arange(m) + 0.5) / m
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.ascontiguousarray(
        np.stack([gx, gy, gz], axis=-1).reshape(-1, 3))


def marching_cubes(field, threshold=0.5):
    """Extract the iso-surface of a raw field, index-aligned to D.

    A field that never crosses the threshold yields an empty mesh; a
    surface touching the field border comes out open (use `reconstruct`
    for guaranteed-closed output).
    """
    values = field.values if isinstance(field, OccupancyField) else \
        np.ascontiguousarray(field, dtype=np.float64)
    m = values.shape[0]
    verts, faces = marching_cubes_core(values, float(threshold))
    if len(faces) == 0:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriMesh(-0.5 + (verts + 0.5) / m, faces)


def reconstruct(params, x, cfg, transform=None):
    """Full inference: field evaluation, empty-cell padding, marching
    cubes.  `transform`, when given, is the normalization map of the
    shape; its inverse carries the mesh back to original coordinates."""
    field = evaluate_field(params, x, cfg)
    m = cfg.resolution
    padded = np.zeros((m + 2, m + 2, m + 2), dtype=np.float64)
    padded[1:-1, 1:-1, 1:-1] = field.values
    verts, faces = marching_cubes_core(padded, cfg.threshold)
    if len(faces) == 0:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    verts = -0.5 + (verts - 0.5) / m
    if transform is not None:
        verts = transform.invert(verts)
    return TriMesh(verts, faces)


# ---------------------------------------------------------------------------
# field dump ("IFVX" layout with a float32 payload)

def save_field(path, field):
    with open(path, "wb") as f:
        f.write(FIELD_MAGIC)
        f.write(struct.pack("<II", FIELD_VERSION, field.m))
        payload = field.values.transpose(2, 1, 0).astype("<f4")
        f.write(np.ascontiguousarray(payload).tobytes())


def load_field(path):
    with open(path, "rb") as f:
        if f.read(4) != FIELD_MAGIC:
            raise ValueError(f"{path}: not a field file")
        version, m = struct.unpack("<II", f.read(8))
        if version != FIELD_VERSION:
            raise ValueError(f"{path}: unsupported field version {version}")
        raw = f.read(4 * m * m * m)
        if len(raw) != 4 * m * m * m:
            raise ValueError(f"{path}: truncated field data")
    values = np.frombuffer(raw, dtype="<f4").reshape(m, m, m).transpose(2, 1, 0)
    return OccupancyField(values.astype(np.float64))
