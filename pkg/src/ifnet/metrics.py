"""Shape comparison: volumetric IoU, Chamfer-L2, normal consistency.

IoU is a Monte-Carlo estimate with oracle labels, the surface metrics
run on area-uniform samples with exact nearest neighbors from the
kd-tree kernels.  Chamfer values are raw squared canonical units; the
CLI applies the conventional x100 display scaling.
"""

import numpy as np

from .geometry import check_watertight, occupancy_oracle, sample_surface
from .kernels import kd_build, kd_query


class KdTree:
    """Exact nearest-neighbor index over a fixed point set.

    Ties go to the lowest original point index, matching a brute-force
    argmin scan.  Optional per-point payload normals ride along.
    """

    def __init__(self, points, normals=None):
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError("points must be [n, 3]")
        self.normals = None
        if normals is not None:
            self.normals = np.ascontiguousarray(normals, dtype=np.float64)
            if self.normals.shape != self.points.shape:
                raise ValueError("normals must pair with points")
        self._tree = kd_build(self.points)

    def query(self, queries):
        """-> (nearest indices, squared distances)."""
        t = self._tree
        q = np.ascontiguousarray(queries, dtype=np.float64)
        return kd_query(t.pts, t.perm, t.dim, t.split, t.left, t.right,
                        t.lo, t.hi, q)


def iou(pred, gt, n_points=100000, seed=0):
    """Volumetric intersection over union, Monte-Carlo estimated inside
    the 5%-expanded union of the two bounding boxes."""
    check_watertight(pred)
    check_watertight(gt)
    lo = np.minimum(pred.bbox()[0], gt.bbox()[0])
    hi = np.maximum(pred.bbox()[1], gt.bbox()[1])
    center = 0.5 * (lo + hi)
    half = 0.525 * (hi - lo)  # 5% expansion
    rng = np.random.default_rng(seed)
    pts = rng.uniform(center - half, center + half, (n_points, 3))
    a = occupancy_oracle(pred, pts).astype(bool)
    b = occupancy_oracle(gt, pts).astype(bool)
    either = int((a | b).sum())
    if either == 0:
        raise ValueError("no sample hit either mesh; IoU undefined")
    return float((a & b).sum() / either)


def _paired_samples(pred, gt, n_points, seed):
    if len(pred.faces) == 0 or len(gt.faces) == 0:
        raise ValueError("cannot compare an empty mesh")
    pa, na, _ = sample_surface(pred, n_points, seed)
    pb, nb, _ = sample_surface(gt, n_points, seed)
    return pa, na, pb, nb


def chamfer_l2(pred, gt, n_points=100000, seed=0):
    """Symmetric mean squared nearest-neighbor distance between surface
    samples.  The shared seed makes self-comparison exactly paired."""
    pa, _, pb, _ = _paired_samples(pred, gt, n_points, seed)
    _, d_ab = KdTree(pb).query(pa)
    _, d_ba = KdTree(pa).query(pb)
    return float((d_ab.mean() + d_ba.mean()) / 2.0)


def normal_consistency(pred, gt, n_points=100000, seed=0):
    """Mean absolute cosine between normals at nearest sample pairs,
    averaged over both directions."""
    pa, na, pb, nb = _paired_samples(pred, gt, n_points, seed)
    for n in (na, nb):
        if np.linalg.norm(n, axis=1).min() < 1e-12:
            raise ValueError("zero-length surface normal")
    i_ab, _ = KdTree(pb).query(pa)
    i_ba, _ = KdTree(pa).query(pb)
    c_ab = np.abs(np.einsum("ij,ij->i", na, nb[i_ab])).mean()
    c_ba = np.abs(np.einsum("ij,ij->i", nb, na[i_ba])).mean()
    return float((c_ab + c_ba) / 2.0)


class MetricReport:
    CSV_HEADER = "iou,chamfer_l2,normal_consistency,n_points,seed"

    def __init__(self, iou, chamfer_l2, normal_consistency, n_points, seed):
        self.iou = float(iou)
        self.chamfer_l2 = float(chamfer_l2)
        self.normal_consistency = float(normal_consistency)
        self.n_points = int(n_points)
        self.seed = int(seed)
        values = (self.iou, self.chamfer_l2, self.normal_consistency)
        if not all(np.isfinite(values)):
            raise ValueError("metrics must be finite")

    def csv_row(self):
        return (f"{self.iou:.17g},{self.chamfer_l2:.17g},"
                f"{self.normal_consistency:.17g},{self.n_points},{self.seed}")

    def table(self):
        return (f"IoU                 {self.iou:8.4f}\n"
                f"Chamfer-L2 (x1e-2)  {self.chamfer_l2 * 100:10.6f}\n"
                f"Normal consistency  {self.normal_consistency:8.4f}\n"
                f"samples {self.n_points}, seed {self.seed}")

    def __eq__(self, other):
        return isinstance(other, MetricReport) and \
            (self.iou, self.chamfer_l2, self.normal_consistency,
             self.n_points, self.seed) == \
            (other.iou, other.chamfer_l2, other.normal_consistency,
             other.n_points, other.seed)


def evaluate(pred, gt, n_points=100000, seed=0):
    """All three metrics under one shared seed -> MetricReport."""
    return MetricReport(iou(pred, gt, n_points, seed),
                        chamfer_l2(pred, gt, n_points, seed),
                        normal_consistency(pred, gt, n_points, seed),
                        n_points, seed)
