"""Backend-independent acceleration structures.

Triangle bins: a uniform 2D grid over a projection plane, used to prune
ray/triangle candidate sets for the occupancy oracle (rays near a Cartesian
axis) and the orthographic depth renderer. Triangles are binned by the cell
containing their projected bounding-box center; queries therefore inflate
their search window by the largest projected half-extent, so no triangle is
ever missed and no per-query deduplication is needed.

The kd-tree build produces a flat array representation (median split on the
widest axis) consumed by the per-backend nearest-neighbor query kernels.
"""

import numpy as np


class TriBins:
    __slots__ = ("cell_start", "tri_order", "lo", "cell", "max_half", "res")

    def __init__(self, cell_start, tri_order, lo, cell, max_half, res):
        self.cell_start = cell_start
        self.tri_order = tri_order
        self.lo = lo
        self.cell = cell
        self.max_half = max_half
        self.res = res

    def as_args(self):
        # flat tuple form accepted by both kernel backends
        return (self.cell_start, self.tri_order,
                float(self.lo[0]), float(self.lo[1]),
                float(self.cell[0]), float(self.cell[1]),
                float(self.max_half[0]), float(self.max_half[1]),
                np.int64(self.res))


def build_tri_bins(centers, halfwidths, res=None):
    """Bin triangles by projected bbox center on a res x res grid.

    centers, halfwidths: [T, 2] arrays in the projection plane.
    """
    t = len(centers)
    if res is None:
        res = int(np.clip(int(np.sqrt(max(t, 1))), 4, 128))
    lo = centers.min(axis=0) - 1e-9 if t else np.zeros(2)
    hi = centers.max(axis=0) + 1e-9 if t else np.ones(2)
    cell = np.maximum((hi - lo) / res, 1e-12)
    ij = np.clip(((centers - lo) / cell).astype(np.int64), 0, res - 1)
    flat = ij[:, 0] * res + ij[:, 1]
    tri_order = np.argsort(flat, kind="stable").astype(np.int64)
    counts = np.bincount(flat, minlength=res * res)
    cell_start = np.zeros(res * res + 1, dtype=np.int64)
    np.cumsum(counts, out=cell_start[1:])
    max_half = halfwidths.max(axis=0) if t else np.zeros(2)
    return TriBins(cell_start, tri_order, lo.astype(np.float64),
                   cell.astype(np.float64), max_half.astype(np.float64), res)


class KdTree:
    __slots__ = ("pts", "perm", "dim", "split", "left", "right", "lo", "hi")

    def __init__(self, pts, perm, dim, split, left, right, lo, hi):
        self.pts = pts      # points permuted into build order
        self.perm = perm    # original index of each permuted point
        self.dim = dim
        self.split = split
        self.left = left
        self.right = right
        self.lo = lo
        self.hi = hi


def kd_build(points, leaf_size=16):
    """Build a balanced kd-tree over points [N, 3]; exact NN, no approximation."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = len(points)
    if n == 0:
        raise ValueError("cannot build a kd-tree over zero points")
    perm = np.arange(n, dtype=np.int64)
    pts = points.copy()

    dim, split, left, right, lo_a, hi_a = [], [], [], [], [], []

    def new_node():
        dim.append(-1)
        split.append(0.0)
        left.append(-1)
        right.append(-1)
        lo_a.append(0)
        hi_a.append(0)
        return len(dim) - 1

    # (node id, lo, hi) ranges over the permuted arrays
    stack = [(new_node(), 0, n)]
    while stack:
        nid, lo, hi = stack.pop()
        if hi - lo <= leaf_size:
            lo_a[nid], hi_a[nid] = lo, hi
            continue
        seg = pts[lo:hi]
        d = int(np.argmax(seg.max(axis=0) - seg.min(axis=0)))
        mid = (hi - lo) // 2
        order = np.argpartition(seg[:, d], mid)
        pts[lo:hi] = seg[order]
        perm[lo:hi] = perm[lo:hi][order]
        dim[nid] = d
        split[nid] = pts[lo + mid, d]
        l, r = new_node(), new_node()
        left[nid], right[nid] = l, r
        stack.append((l, lo, lo + mid))
        stack.append((r, lo + mid, hi))

    return KdTree(pts, perm,
                  np.array(dim, dtype=np.int32), np.array(split, dtype=np.float64),
                  np.array(left, dtype=np.int32), np.array(right, dtype=np.int32),
                  np.array(lo_a, dtype=np.int64), np.array(hi_a, dtype=np.int64))
