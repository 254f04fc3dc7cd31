"""Pure-NumPy implementations of the hot kernels.

This is the fallback backend (``IFNET_BACKEND=numpy``); semantics here are
the reference that ``_numba`` must match. Vectorization favors clarity over
peak throughput; the numba backend exists for the heavy runs.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..mc_tables import EDGE_TABLE, TRI_TABLE

_U64 = (1 << 64) - 1

# Canonical edge endpoints ordered low-corner first so both cells sharing an
# edge interpolate identically; AXIS/BASE give the global edge identity.
_EDGE_LOW = (0, 1, 3, 0, 4, 5, 7, 4, 0, 1, 2, 3)
_EDGE_AXIS = (0, 1, 0, 1, 0, 1, 0, 1, 2, 2, 2, 2)
_CORNER = ((0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
           (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1))


# ---------------------------------------------------------------------------
# convolution im2col / col2im (3x3x3 kernel, zero padding 1, stride 1)

def im2col_3x3x3(x):
    c, d, h, w = x.shape
    xp = np.zeros((c, d + 2, h + 2, w + 2), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, 1:-1] = x
    win = sliding_window_view(xp, (3, 3, 3), axis=(1, 2, 3))
    return np.ascontiguousarray(
        win.transpose(1, 2, 3, 0, 4, 5, 6)).reshape(d * h * w, c * 27)


def col2im_3x3x3(cols, c, d, h, w):
    gxp = np.zeros((c, d + 2, h + 2, w + 2), dtype=cols.dtype)
    cols7 = cols.reshape(d, h, w, c, 3, 3, 3)
    for kd in range(3):
        for kh in range(3):
            for kw in range(3):
                gxp[:, kd:kd + d, kh:kh + h, kw:kw + w] += \
                    cols7[:, :, :, :, kd, kh, kw].transpose(3, 0, 1, 2)
    return gxp[:, 1:-1, 1:-1, 1:-1]


# ---------------------------------------------------------------------------
# 2x2x2 max pooling; argmax stored as flat offset 0..7 in (dz, dy, dx) order

def maxpool2_forward(x):
    c, d, h, w = x.shape
    r = x.reshape(c, d // 2, 2, h // 2, 2, w // 2, 2)
    r = np.ascontiguousarray(r.transpose(0, 1, 3, 5, 2, 4, 6))
    r = r.reshape(c, d // 2, h // 2, w // 2, 8)
    arg = r.argmax(axis=-1)
    y = np.take_along_axis(r, arg[..., None], axis=-1)[..., 0]
    return y, arg.astype(np.uint8)


def maxpool2_backward(arg, gy, d, h, w):
    c, d2, h2, w2 = gy.shape
    g8 = np.zeros((c, d2, h2, w2, 8), dtype=gy.dtype)
    np.put_along_axis(g8, arg[..., None].astype(np.int64), gy[..., None], axis=-1)
    g8 = g8.reshape(c, d2, h2, w2, 2, 2, 2).transpose(0, 1, 4, 2, 5, 3, 6)
    return np.ascontiguousarray(g8).reshape(c, d, h, w)


# ---------------------------------------------------------------------------
# trilinear interpolation on a [C, K, K, K] grid

def trilinear_gather(grid, i0, frac):
    ix, iy, iz = i0[:, 0], i0[:, 1], i0[:, 2]
    f = frac.astype(grid.dtype, copy=False)
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    out = None
    for dx in (0, 1):
        wx = fx if dx else 1 - fx
        for dy in (0, 1):
            wy = fy if dy else 1 - fy
            for dz in (0, 1):
                wz = fz if dz else 1 - fz
                contrib = (wx * wy * wz) * grid[:, ix + dx, iy + dy, iz + dz]
                out = contrib if out is None else out + contrib
    return np.ascontiguousarray(out.T)


def trilinear_scatter(gout, i0, frac, k):
    c = gout.shape[1]
    ix, iy, iz = i0[:, 0], i0[:, 1], i0[:, 2]
    f = frac.astype(gout.dtype, copy=False)
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    acc = np.zeros((k, k, k, c), dtype=gout.dtype)
    for dx in (0, 1):
        wx = fx if dx else 1 - fx
        for dy in (0, 1):
            wy = fy if dy else 1 - fy
            for dz in (0, 1):
                wz = fz if dz else 1 - fz
                np.add.at(acc, (ix + dx, iy + dy, iz + dz),
                          gout * (wx * wy * wz)[:, None])
    return np.ascontiguousarray(acc.transpose(3, 0, 1, 2))


# ---------------------------------------------------------------------------
# deterministic jitter hash (splitmix64), exact integer semantics

def _mix(z):
    z = (z + 0x9E3779B97F4A7C15) & _U64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _U64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _U64
    z ^= z >> 31
    return z


def jitter_offsets(seed, point_index, axis, attempt):
    """Three deterministic offsets in [-1, 1) for a ray-cast retry."""
    s = _mix(_mix(_mix((seed + point_index) & _U64) + axis) + attempt)
    return (_mix(s + 1) >> 11) * 2.0 ** -52 - 1.0, \
           (_mix(s + 2) >> 11) * 2.0 ** -52 - 1.0, \
           (_mix(s + 3) >> 11) * 2.0 ** -52 - 1.0


# ---------------------------------------------------------------------------
# crossing-parity ray casting (occupancy oracle)

def _bin_candidates(bins, p_lo, p_hi, q_lo, q_hi):
    cell_start, tri_order, lo0, lo1, c0, c1, h0, h1, res = bins
    i_lo = int(np.clip(np.floor((p_lo - h0 - lo0) / c0), 0, res - 1))
    i_hi = int(np.clip(np.floor((p_hi + h0 - lo0) / c0), 0, res - 1))
    j_lo = int(np.clip(np.floor((q_lo - h1 - lo1) / c1), 0, res - 1))
    j_hi = int(np.clip(np.floor((q_hi + h1 - lo1) / c1), 0, res - 1))
    parts = []
    for i in range(i_lo, i_hi + 1):
        base = i * res
        s, e = cell_start[base + j_lo], cell_start[base + j_hi + 1]
        if e > s:
            parts.append(tri_order[s:e])
    if not parts:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(parts)


def _parity_one_ray(v0, e1, e2, nrm, cand, origin, direction,
                    bary_eps, ndet_eps):
    """Crossing count along one ray, or -1 if a graze forces a retry."""
    cv0 = v0[cand]
    pvec = np.cross(direction[None, :], e2[cand])
    det = np.einsum("ij,ij->i", e1[cand], pvec)
    ndet = np.einsum("ij,j->i", nrm[cand], direction)
    tvec = origin[None, :] - cv0
    plane_d = np.einsum("ij,ij->i", tvec, nrm[cand])

    grazing = np.abs(ndet) < ndet_eps
    if np.any(grazing & (np.abs(plane_d) < 1e-9)):
        return -1
    keep = ~grazing
    if not np.any(keep):
        return 0
    inv = np.zeros_like(det)
    inv[keep] = 1.0 / det[keep]
    u = np.einsum("ij,ij->i", tvec, pvec) * inv
    qvec = np.cross(tvec, e1[cand])
    v = np.einsum("ij,j->i", qvec, direction) * inv
    t = np.einsum("ij,ij->i", e2[cand], qvec) * inv

    near = keep & (u > -bary_eps) & (v > -bary_eps) & \
        (u + v < 1 + bary_eps) & (t > -bary_eps)
    edgey = near & ((u < bary_eps) | (v < bary_eps) | (u + v > 1 - bary_eps))
    if np.any(edgey):
        return -1
    hits = keep & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
    return int(np.count_nonzero(hits))


def ray_parity_votes(v0, e1, e2, bins0, bins1, bins2, points, seed,
                     jitter, max_attempts):
    nrm = np.cross(e1, e2)
    norms = np.linalg.norm(nrm, axis=1)
    norms[norms == 0] = 1.0
    nrm = nrm / norms[:, None]
    bins = (bins0, bins1, bins2)
    n = len(points)
    inside = np.zeros(n, dtype=np.uint8)
    margin = 4.0 * jitter + 1e-6
    for idx in range(n):
        p = points[idx]
        votes = 0
        for axis in range(3):
            pa, qa = (axis + 1) % 3, (axis + 2) % 3
            cand = _bin_candidates(bins[axis], p[pa] - margin, p[pa] + margin,
                                   p[qa] - margin, p[qa] + margin)
            parity = -1
            for attempt in range(max_attempts):
                o1, o2, o3 = jitter_offsets(seed, idx, axis, attempt)
                d = np.array([o1, o2, o3]) * jitter
                d[axis] += 1.0
                d /= np.linalg.norm(d)
                crossings = _parity_one_ray(v0, e1, e2, nrm, cand, p, d,
                                            1e-9, 1e-9)
                if crossings >= 0:
                    parity = crossings & 1
                    break
            if parity < 0:
                return inside, idx
            votes += parity
        inside[idx] = 1 if votes >= 2 else 0
    return inside, -1


# ---------------------------------------------------------------------------
# orthographic depth rendering

def depth_render(v0, e1, e2, bins, right, up, direction, res, origin_back):
    t_img = np.full((res, res), np.inf)
    pvec = np.cross(direction[None, :], e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) > 1e-12
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)

    cell_start, tri_order, lo0, lo1, c0, c1, h0, h1, gres = bins
    px = -0.5 + (np.arange(res) + 0.5) / res
    # pixel -> bin cell, batched per cell so the candidate set is shared
    ci = np.clip(((px - lo0) / c0).astype(np.int64), 0, gres - 1)
    cj = np.clip(((px - lo1) / c1).astype(np.int64), 0, gres - 1)
    for bi in np.unique(ci):
        rows = np.nonzero(ci == bi)[0]
        u_lo = lo0 + bi * c0
        for bj in np.unique(cj):
            cols = np.nonzero(cj == bj)[0]
            v_lo = lo1 + bj * c1
            cand = _bin_candidates(bins, u_lo, u_lo + c0, v_lo, v_lo + c1)
            cand = cand[ok[cand]]
            if len(cand) == 0:
                continue
            uu, vv = np.meshgrid(px[rows], px[cols], indexing="ij")
            origins = (uu[..., None] * right + vv[..., None] * up
                       - origin_back * direction)
            tvec = origins[:, :, None, :] - v0[cand]
            a = np.einsum("xync,nc->xyn", tvec, pvec[cand]) * inv[cand]
            qvec = np.cross(tvec, e1[cand])
            b = np.einsum("xync,c->xyn", qvec, direction) * inv[cand]
            t = np.einsum("nc,xync->xyn", e2[cand], qvec) * inv[cand]
            hit = (a >= 0) & (b >= 0) & (a + b <= 1) & (t > 0)
            t = np.where(hit, t, np.inf)
            t_img[np.ix_(rows, cols)] = t.min(axis=2)
    return t_img


# ---------------------------------------------------------------------------
# marching cubes sweep (vertices in field-sample index coordinates)

def marching_cubes_core(field, thresh):
    m3 = field.shape[0]
    m = m3 - 1
    out = field < thresh
    case = np.zeros((m, m, m), dtype=np.int32)
    for bit, (di, dj, dk) in enumerate(_CORNER):
        case |= out[di:di + m, dj:dj + m, dk:dk + m].astype(np.int32) << bit
    et = EDGE_TABLE[case]
    ci, cj, ck = np.nonzero(et)
    if len(ci) == 0:
        return np.zeros((0, 3), dtype=np.float64), np.zeros((0, 3), dtype=np.int32)
    cases = case[ci, cj, ck]
    flags = et[ci, cj, ck]

    keys12 = np.empty((len(ci), 12), dtype=np.int64)
    for e in range(12):
        bi, bj, bk = _CORNER[_EDGE_LOW[e]]
        keys12[:, e] = ((_EDGE_AXIS[e] * m3 + ci + bi) * m3 + cj + bj) * m3 + ck + bk
    valid = (flags[:, None] >> np.arange(12)) & 1 > 0
    ukeys = np.unique(keys12[valid])

    axis = ukeys // (m3 * m3 * m3)
    rem = ukeys - axis * m3 * m3 * m3
    gi = rem // (m3 * m3)
    gj = (rem // m3) % m3
    gk = rem % m3
    va = field[gi, gj, gk].astype(np.float64)
    step = np.zeros((len(ukeys), 3), dtype=np.int64)
    step[np.arange(len(ukeys)), axis] = 1
    vb = field[gi + step[:, 0], gj + step[:, 1], gk + step[:, 2]].astype(np.float64)
    s = np.clip((thresh - va) / (vb - va), 0.0, 1.0)
    verts = np.stack([gi, gj, gk], axis=1).astype(np.float64)
    verts[np.arange(len(ukeys)), axis] += s

    vidx12 = np.searchsorted(ukeys, keys12).astype(np.int32)
    tri = TRI_TABLE[cases]
    tvalid = tri >= 0
    vv = np.take_along_axis(vidx12, np.where(tvalid, tri, 0), axis=1)
    faces = vv[tvalid].reshape(-1, 3)
    return verts, np.ascontiguousarray(faces)


# ---------------------------------------------------------------------------
# kd-tree nearest neighbor (exact; ties to the lowest original index)

def kd_query(pts, perm, dim, split, left, right, lo, hi, queries):
    nq = len(queries)
    out_idx = np.empty(nq, dtype=np.int64)
    out_d2 = np.empty(nq, dtype=np.float64)
    stack = np.empty(128, dtype=np.int64)
    sdist = np.empty(128, dtype=np.float64)
    for qi in range(nq):
        q = queries[qi]
        best_d2 = np.inf
        best_idx = -1
        stack[0] = 0
        sdist[0] = 0.0
        top = 1
        while top > 0:
            top -= 1
            nid = stack[top]
            if sdist[top] > best_d2:
                continue
            while left[nid] >= 0:
                delta = q[dim[nid]] - split[nid]
                if delta < 0:
                    near, far = left[nid], right[nid]
                else:
                    near, far = right[nid], left[nid]
                fd = delta * delta
                if fd <= best_d2:
                    stack[top] = far
                    sdist[top] = fd
                    top += 1
                nid = near
            seg = pts[lo[nid]:hi[nid]]
            if len(seg) == 0:
                continue
            d2 = ((seg - q) ** 2).sum(axis=1)
            dmin = d2.min()
            cand = perm[lo[nid]:hi[nid]][d2 == dmin].min()
            if dmin < best_d2 or (dmin == best_d2 and cand < best_idx):
                best_d2 = dmin
                best_idx = cand
        out_idx[qi] = best_idx
        out_d2[qi] = best_d2
    return out_idx, out_d2
