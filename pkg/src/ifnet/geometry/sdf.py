"""Analytic signed distance functions, positive inside.

These are the ground-truth oracles for the synthetic shapes: generator
surfaces are checked against their sign, and the implicit-union shapes are
meshed directly from them.
"""

import numpy as np


def sphere_sdf(points, radius, center=(0.0, 0.0, 0.0)):
    d = np.asarray(points, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    return radius - np.linalg.norm(d, axis=-1)


def box_sdf(points, half_extents, center=(0.0, 0.0, 0.0)):
    p = np.abs(np.asarray(points, dtype=np.float64) - np.asarray(center, dtype=np.float64))
    q = p - np.asarray(half_extents, dtype=np.float64)
    outside = np.linalg.norm(np.maximum(q, 0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0)
    return -(outside + inside)


def capsule_sdf(points, a, b, radius):
    """Capsule around segment a-b with the given radius."""
    p = np.asarray(points, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0:
        return sphere_sdf(p, radius, a)
    t = np.clip(((p - a) @ ab) / denom, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return radius - np.linalg.norm(p - closest, axis=-1)


def union_sdf(*sdfs):
    """Union of positive-inside fields: pointwise maximum."""
    def f(points):
        vals = [s(points) for s in sdfs]
        return np.maximum.reduce(vals)
    return f
