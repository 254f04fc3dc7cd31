"""Training data: points near ground-truth surfaces with occupancy labels.

Half the points hug the surface (small sigma), half probe the wider
surroundings (large sigma), so the decoder sees both the decision
boundary and easy in/out context.  Records bundle each shape's
conditioning input with its labeled points in one "IFDS" container.
"""

import struct

import numpy as np

from .geometry import occupancy_oracle, sample_surface

DATASET_MAGIC = b"IFDS"
DATASET_VERSION = 1


class DatasetError(ValueError):
    """An IFDS file is malformed."""


class SamplerConfig:
    """How many points per shape and how far they stray from the surface."""

    def __init__(self, count=50000, sigma1=0.01, sigma2=0.1, ratio=0.5,
                 seed=0):
        self.count = int(count)
        self.sigma1 = float(sigma1)
        self.sigma2 = float(sigma2)
        self.ratio = float(ratio)
        self.seed = int(seed)
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if not 0.0 < self.sigma1 < self.sigma2:
            raise ValueError("need 0 < sigma1 < sigma2")
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError("ratio must lie in [0, 1]")

    def to_dict(self):
        return {"count": self.count, "sigma1": self.sigma1,
                "sigma2": self.sigma2, "ratio": self.ratio, "seed": self.seed}


def sample_training_points(mesh, cfg):
    """Displaced surface samples with oracle labels -> (points, labels).

    Deterministic in (mesh, cfg).  Points falling outside the domain are
    clamped to it so every sample stays a legal feature lookup.
    """
    rng = np.random.default_rng(cfg.seed)
    base, _, _ = sample_surface(mesh, cfg.count, rng)
    n1 = int(round(cfg.ratio * cfg.count))
    sigma = np.full(cfg.count, cfg.sigma2)
    sigma[:n1] = cfg.sigma1
    points = base + rng.standard_normal((cfg.count, 3)) * sigma[:, None]
    np.clip(points, -0.5, 0.5, out=points)
    labels = occupancy_oracle(mesh, points)
    return points, labels


class ShapeRecord:
    """One shape: conditioning voxel input, optional input point cloud,
    and the labeled training points."""

    def __init__(self, shape_id, input_grid, points, labels, cloud=None,
                 mesh_ref=""):
        self.shape_id = str(shape_id)
        self.input_grid = np.ascontiguousarray(input_grid, dtype=np.uint8)
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        self.labels = np.ascontiguousarray(labels, dtype=np.uint8)
        self.cloud = (None if cloud is None
                      else np.ascontiguousarray(cloud, dtype=np.float64))
        self.mesh_ref = str(mesh_ref)
        if self.input_grid.ndim != 3 or len(set(self.input_grid.shape)) != 1:
            raise ValueError("input grid must be a cube")
        if self.points.shape != (len(self.labels), 3):
            raise ValueError("points and labels must pair up")
        if self.labels.max(initial=0) > 1:
            raise ValueError("labels must be binary")
        if self.cloud is not None and (self.cloud.ndim != 2
                                       or self.cloud.shape[1] != 3):
            raise ValueError("cloud must be [n, 3]")

    @property
    def sample_count(self):
        return len(self.labels)


def _write_str(f, s):
    raw = s.encode()
    f.write(struct.pack("<I", len(raw)))
    f.write(raw)


def write_dataset(path, records):
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<II", DATASET_VERSION, len(records)))
        for r in records:
            _write_str(f, r.shape_id)
            _write_str(f, r.mesh_ref)
            cloud_n = 0 if r.cloud is None else len(r.cloud)
            f.write(struct.pack("<III", r.input_grid.shape[0],
                                r.sample_count, cloud_n))
            f.write(r.input_grid.tobytes())
            f.write(np.ascontiguousarray(r.points, dtype="<f8").tobytes())
            f.write(r.labels.tobytes())
            if r.cloud is not None:
                f.write(np.ascontiguousarray(r.cloud, dtype="<f8").tobytes())


def _read_exact(f, count, path):
    data = f.read(count)
    if len(data) != count:
        raise DatasetError(f"{path}: truncated at byte {f.tell()}")
    return data


def _read_str(f, path):
    (n,) = struct.unpack("<I", _read_exact(f, 4, path))
    return _read_exact(f, n, path).decode()


def read_dataset(path):
    records = []
    with open(path, "rb") as f:
        if _read_exact(f, 4, path) != DATASET_MAGIC:
            raise DatasetError(f"{path}: not an IFDS dataset")
        version, count = struct.unpack("<II", _read_exact(f, 8, path))
        if version != DATASET_VERSION:
            raise DatasetError(f"{path}: dataset version {version}, "
                               f"expected {DATASET_VERSION}")
        for _ in range(count):
            shape_id = _read_str(f, path)
            mesh_ref = _read_str(f, path)
            n, s, cloud_n = struct.unpack("<III", _read_exact(f, 12, path))
            grid = np.frombuffer(_read_exact(f, n ** 3, path),
                                 dtype=np.uint8).reshape(n, n, n)
            points = np.frombuffer(_read_exact(f, 24 * s, path),
                                   dtype="<f8").reshape(s, 3)
            labels = np.frombuffer(_read_exact(f, s, path), dtype=np.uint8)
            cloud = None
            if cloud_n:
                cloud = np.frombuffer(_read_exact(f, 24 * cloud_n, path),
                                      dtype="<f8").reshape(cloud_n, 3)
            records.append(ShapeRecord(shape_id, grid, points, labels,
                                       cloud=cloud, mesh_ref=mesh_ref))
    return records


def make_batch(records, batch_ids, r_size, rng):
    """Fresh point subsamples for one optimization step.

    Returns [(input_grid, points [r, 3], labels [r])] in batch_ids order;
    the subsample is uniform without replacement and regenerated per call.
    """
    out = []
    for i in batch_ids:
        r = records[i]
        if r_size > r.sample_count:
            raise ValueError(
                f"batch wants {r_size} points but shape {r.shape_id} "
                f"only has {r.sample_count}")
        idx = rng.choice(r.sample_count, size=r_size, replace=False)
        out.append((r.input_grid, r.points[idx], r.labels[idx]))
    return out
