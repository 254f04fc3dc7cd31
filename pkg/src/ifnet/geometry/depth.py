"""Single-view depth culling via an orthographic render."""

import numpy as np

from ..kernels import build_tri_bins, depth_render
from .pointcloud import PointCloud

# ray origins sit this far behind the domain along the view direction;
# anything inside the unit ball around the origin is in front of them
ORIGIN_BACK = 2.0


def view_basis(view_direction):
    d = np.asarray(view_direction, dtype=np.float64)
    n = np.linalg.norm(d)
    if n == 0:
        raise ValueError("view direction must be nonzero")
    d = d / n
    up_hint = np.array([0.0, 1.0, 0.0]) if abs(d[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    right = np.cross(up_hint, d)
    right /= np.linalg.norm(right)
    up = np.cross(d, right)
    return right, up, d


def depth_cull(mesh, view_direction, image_res):
    """One surface point per pixel that sees the mesh; nearest hit only.

    Pixel centers span the unit square of the view plane, so the grid covers
    the whole canonical domain regardless of direction.
    """
    if image_res < 1:
        raise ValueError("image resolution must be positive")
    right, up, d = view_basis(view_direction)
    v0 = mesh.vertices[mesh.faces[:, 0]]
    e1 = mesh.vertices[mesh.faces[:, 1]] - v0
    e2 = mesh.vertices[mesh.faces[:, 2]] - v0
    tv = mesh.triangles()
    pu = tv @ right
    pv = tv @ up
    centers = np.stack([(pu.min(axis=1) + pu.max(axis=1)) / 2,
                        (pv.min(axis=1) + pv.max(axis=1)) / 2], axis=1)
    halves = np.stack([(pu.max(axis=1) - pu.min(axis=1)) / 2,
                       (pv.max(axis=1) - pv.min(axis=1)) / 2], axis=1)
    bins = build_tri_bins(centers, halves).as_args()
    t_img = depth_render(np.ascontiguousarray(v0), np.ascontiguousarray(e1),
                         np.ascontiguousarray(e2), bins, right, up, d,
                         int(image_res), ORIGIN_BACK)
    hit = np.isfinite(t_img)
    if not hit.any():
        return PointCloud(np.zeros((0, 3)))
    px = -0.5 + (np.arange(image_res) + 0.5) / image_res
    uu, vv = np.meshgrid(px, px, indexing="ij")
    origins = uu[hit][:, None] * right + vv[hit][:, None] * up - ORIGIN_BACK * d
    return PointCloud(origins + t_img[hit][:, None] * d)
