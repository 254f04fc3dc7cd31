"""Point clouds with optional normals, XYZ text I/O."""

import numpy as np


class PointCloud:
    def __init__(self, points, normals=None):
        self.points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(self.points).all():
            raise ValueError("point cloud contains non-finite coordinates")
        if normals is not None:
            normals = np.ascontiguousarray(normals, dtype=np.float64).reshape(-1, 3)
            if len(normals) != len(self.points):
                raise ValueError("normals length mismatch")
        self.normals = normals

    def __len__(self):
        return len(self.points)


def save_xyz(path, cloud):
    with open(path, "w") as f:
        if cloud.normals is None:
            for p in cloud.points:
                f.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
        else:
            for p, n in zip(cloud.points, cloud.normals):
                f.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} "
                        f"{n[0]:.9g} {n[1]:.9g} {n[2]:.9g}\n")


def load_xyz(path):
    pts, nrm = [], []
    with open(path) as f:
        for no, raw in enumerate(f, start=1):
            ln = raw.strip()
            if not ln or ln.startswith("#"):
                continue
            parts = ln.split()
            if len(parts) not in (3, 6):
                raise ValueError(f"{path}:{no}: expected 'x y z' or 'x y z nx ny nz'")
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise ValueError(f"{path}:{no}: bad number") from None
            pts.append(vals[:3])
            if len(vals) == 6:
                nrm.append(vals[3:])
    if nrm and len(nrm) != len(pts):
        raise ValueError(f"{path}: some lines carry normals and some do not")
    return PointCloud(np.array(pts).reshape(-1, 3),
                      np.array(nrm) if nrm else None)
