"""Numba-jitted implementations of the hot kernels.

Same contracts as ``_numpy``; loops are written so integer outputs match the
numpy backend exactly and float outputs match to the last bit wherever the
accumulation order can be kept identical (trilinear, im2col/col2im, marching
cubes vertex order). Jitted cores take preallocated outputs so they stay
dtype-generic; the public functions are thin wrappers. Compiled artifacts are
cached on disk, so only the first process pays the jit cost.
"""

import numpy as np
from numba import njit, prange

from ..mc_tables import EDGE_TABLE, TRI_TABLE

_CORNER = np.array([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
                    (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)], dtype=np.int64)
_EDGE_LOW = np.array([0, 1, 3, 0, 4, 5, 7, 4, 0, 1, 2, 3], dtype=np.int64)
_EDGE_AXIS = np.array([0, 1, 0, 1, 0, 1, 0, 1, 2, 2, 2, 2], dtype=np.int64)


# ---------------------------------------------------------------------------
# convolution im2col / col2im

@njit(cache=True, parallel=True)
def _im2col_core(x, cols):
    c, d, h, w = x.shape
    for z in prange(d):
        for y in range(h):
            for xx in range(w):
                pos = (z * h + y) * w + xx
                for ci in range(c):
                    base = ci * 27
                    for kd in range(3):
                        zz = z + kd - 1
                        if zz < 0 or zz >= d:
                            continue
                        for kh in range(3):
                            yy = y + kh - 1
                            if yy < 0 or yy >= h:
                                continue
                            for kw in range(3):
                                ww = xx + kw - 1
                                if ww < 0 or ww >= w:
                                    continue
                                cols[pos, base + (kd * 3 + kh) * 3 + kw] = x[ci, zz, yy, ww]


def im2col_3x3x3(x):
    c, d, h, w = x.shape
    cols = np.zeros((d * h * w, c * 27), dtype=x.dtype)
    _im2col_core(x, cols)
    return cols


@njit(cache=True, parallel=True)
def _col2im_core(cols, gx):
    c, d, h, w = gx.shape
    for a in prange(d):
        for b in range(h):
            for e in range(w):
                for ci in range(c):
                    acc = gx[ci, a, b, e]
                    base = ci * 27
                    for kd in range(3):
                        z = a - kd + 1
                        if z < 0 or z >= d:
                            continue
                        for kh in range(3):
                            y = b - kh + 1
                            if y < 0 or y >= h:
                                continue
                            for kw in range(3):
                                xx = e - kw + 1
                                if xx < 0 or xx >= w:
                                    continue
                                pos = (z * h + y) * w + xx
                                acc += cols[pos, base + (kd * 3 + kh) * 3 + kw]
                    gx[ci, a, b, e] = acc


def col2im_3x3x3(cols, c, d, h, w):
    gx = np.zeros((c, d, h, w), dtype=cols.dtype)
    _col2im_core(cols, gx)
    return gx


# ---------------------------------------------------------------------------
# 2x2x2 max pooling

@njit(cache=True, parallel=True)
def _maxpool_fwd_core(x, y, arg):
    c, d2, h2, w2 = y.shape
    for ci in prange(c):
        for z in range(d2):
            for yy in range(h2):
                for xx in range(w2):
                    best = x[ci, 2 * z, 2 * yy, 2 * xx]
                    bi = 0
                    k = 0
                    for dz in range(2):
                        for dy in range(2):
                            for dx in range(2):
                                v = x[ci, 2 * z + dz, 2 * yy + dy, 2 * xx + dx]
                                if v > best:
                                    best = v
                                    bi = k
                                k += 1
                    y[ci, z, yy, xx] = best
                    arg[ci, z, yy, xx] = bi


def maxpool2_forward(x):
    c, d, h, w = x.shape
    y = np.empty((c, d // 2, h // 2, w // 2), dtype=x.dtype)
    arg = np.empty((c, d // 2, h // 2, w // 2), dtype=np.uint8)
    _maxpool_fwd_core(x, y, arg)
    return y, arg


@njit(cache=True, parallel=True)
def _maxpool_bwd_core(arg, gy, gx):
    c, d2, h2, w2 = gy.shape
    for ci in prange(c):
        for z in range(d2):
            for yy in range(h2):
                for xx in range(w2):
                    k = arg[ci, z, yy, xx]
                    dz = k >> 2
                    dy = (k >> 1) & 1
                    dx = k & 1
                    gx[ci, 2 * z + dz, 2 * yy + dy, 2 * xx + dx] = gy[ci, z, yy, xx]


def maxpool2_backward(arg, gy, d, h, w):
    c = gy.shape[0]
    gx = np.zeros((c, d, h, w), dtype=gy.dtype)
    _maxpool_bwd_core(arg, gy, gx)
    return gx


# ---------------------------------------------------------------------------
# trilinear interpolation

@njit(cache=True, parallel=True)
def _trilinear_gather_core(grid, i0, f, one, out):
    q, c = out.shape
    for qi in prange(q):
        ix, iy, iz = i0[qi, 0], i0[qi, 1], i0[qi, 2]
        fx, fy, fz = f[qi, 0], f[qi, 1], f[qi, 2]
        for dx in range(2):
            wx = fx if dx == 1 else one - fx
            for dy in range(2):
                wy = fy if dy == 1 else one - fy
                for dz in range(2):
                    wz = fz if dz == 1 else one - fz
                    wq = (wx * wy) * wz
                    for ci in range(c):
                        out[qi, ci] += wq * grid[ci, ix + dx, iy + dy, iz + dz]


def trilinear_gather(grid, i0, frac):
    f = frac.astype(grid.dtype, copy=False)
    out = np.zeros((i0.shape[0], grid.shape[0]), dtype=grid.dtype)
    _trilinear_gather_core(grid, i0, f, grid.dtype.type(1), out)
    return out


@njit(cache=True)
def _trilinear_scatter_core(gout, i0, f, one, acc):
    q, c = gout.shape
    # corner-major accumulation, matching the numpy backend's add order
    for dx in range(2):
        for dy in range(2):
            for dz in range(2):
                for qi in range(q):
                    fx, fy, fz = f[qi, 0], f[qi, 1], f[qi, 2]
                    wx = fx if dx == 1 else one - fx
                    wy = fy if dy == 1 else one - fy
                    wz = fz if dz == 1 else one - fz
                    wq = (wx * wy) * wz
                    ix, iy, iz = i0[qi, 0] + dx, i0[qi, 1] + dy, i0[qi, 2] + dz
                    for ci in range(c):
                        acc[ci, ix, iy, iz] += gout[qi, ci] * wq


def trilinear_scatter(gout, i0, frac, k):
    f = frac.astype(gout.dtype, copy=False)
    acc = np.zeros((gout.shape[1], k, k, k), dtype=gout.dtype)
    _trilinear_scatter_core(gout, i0, f, gout.dtype.type(1), acc)
    return acc


# ---------------------------------------------------------------------------
# splitmix64 jitter hash

@njit(cache=True)
def _mix(z):
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(0xBF58476D1CE4E5B9)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return z


@njit(cache=True)
def _jitter3(seed, point_index, axis, attempt):
    s = _mix(_mix(_mix(seed + np.uint64(point_index)) + np.uint64(axis))
             + np.uint64(attempt))
    o1 = (_mix(s + np.uint64(1)) >> np.uint64(11)) * 2.0 ** -52 - 1.0
    o2 = (_mix(s + np.uint64(2)) >> np.uint64(11)) * 2.0 ** -52 - 1.0
    o3 = (_mix(s + np.uint64(3)) >> np.uint64(11)) * 2.0 ** -52 - 1.0
    return o1, o2, o3


# ---------------------------------------------------------------------------
# crossing-parity ray casting

@njit(cache=True)
def _cell_window(lo, cell, h, res, p_lo, p_hi):
    i_lo = int(np.floor((p_lo - h - lo) / cell))
    i_hi = int(np.floor((p_hi + h - lo) / cell))
    if i_lo < 0:
        i_lo = 0
    if i_lo > res - 1:
        i_lo = res - 1
    if i_hi < 0:
        i_hi = 0
    if i_hi > res - 1:
        i_hi = res - 1
    return i_lo, i_hi


@njit(cache=True)
def _parity_stream(v0, e1, e2, nrm, cell_start, tri_order, res,
                   i_lo, i_hi, j_lo, j_hi, ox, oy, oz, dx, dy, dz):
    """Crossing count for one ray over the binned candidates, -1 on a graze."""
    crossings = 0
    for i in range(i_lo, i_hi + 1):
        base = i * res
        s = cell_start[base + j_lo]
        e = cell_start[base + j_hi + 1]
        for kk in range(s, e):
            ti = tri_order[kk]
            e1x, e1y, e1z = e1[ti, 0], e1[ti, 1], e1[ti, 2]
            e2x, e2y, e2z = e2[ti, 0], e2[ti, 1], e2[ti, 2]
            pvx = dy * e2z - dz * e2y
            pvy = dz * e2x - dx * e2z
            pvz = dx * e2y - dy * e2x
            det = e1x * pvx + e1y * pvy + e1z * pvz
            ndet = nrm[ti, 0] * dx + nrm[ti, 1] * dy + nrm[ti, 2] * dz
            tvx = ox - v0[ti, 0]
            tvy = oy - v0[ti, 1]
            tvz = oz - v0[ti, 2]
            if abs(ndet) < 1e-9:
                plane_d = tvx * nrm[ti, 0] + tvy * nrm[ti, 1] + tvz * nrm[ti, 2]
                if abs(plane_d) < 1e-9:
                    return -1
                continue
            inv = 1.0 / det
            u = (tvx * pvx + tvy * pvy + tvz * pvz) * inv
            qvx = tvy * e1z - tvz * e1y
            qvy = tvz * e1x - tvx * e1z
            qvz = tvx * e1y - tvy * e1x
            v = (dx * qvx + dy * qvy + dz * qvz) * inv
            t = (e2x * qvx + e2y * qvy + e2z * qvz) * inv
            eps = 1e-9
            if u > -eps and v > -eps and u + v < 1 + eps and t > -eps:
                if u < eps or v < eps or u + v > 1 - eps:
                    return -1
            if u >= 0 and v >= 0 and u + v <= 1 and t > 0:
                crossings += 1
    return crossings


@njit(cache=True, parallel=True)
def _parity_votes_core(v0, e1, e2, nrm, bins0, bins1, bins2, points, seed,
                       jitter, max_attempts, inside, failed):
    n = points.shape[0]
    margin = 4.0 * jitter + 1e-6
    for idx in prange(n):
        votes = 0
        bad = False
        for axis in range(3):
            if axis == 0:
                cs, to, res = bins0[0], bins0[1], bins0[8]
                lo0, lo1, c0, c1, h0, h1 = bins0[2], bins0[3], bins0[4], bins0[5], bins0[6], bins0[7]
            elif axis == 1:
                cs, to, res = bins1[0], bins1[1], bins1[8]
                lo0, lo1, c0, c1, h0, h1 = bins1[2], bins1[3], bins1[4], bins1[5], bins1[6], bins1[7]
            else:
                cs, to, res = bins2[0], bins2[1], bins2[8]
                lo0, lo1, c0, c1, h0, h1 = bins2[2], bins2[3], bins2[4], bins2[5], bins2[6], bins2[7]
            pa = (axis + 1) % 3
            qa = (axis + 2) % 3
            i_lo, i_hi = _cell_window(lo0, c0, h0, res,
                                      points[idx, pa] - margin,
                                      points[idx, pa] + margin)
            j_lo, j_hi = _cell_window(lo1, c1, h1, res,
                                      points[idx, qa] - margin,
                                      points[idx, qa] + margin)
            parity = -1
            for attempt in range(max_attempts):
                o1, o2, o3 = _jitter3(seed, idx, axis, attempt)
                ddx = o1 * jitter
                ddy = o2 * jitter
                ddz = o3 * jitter
                if axis == 0:
                    ddx += 1.0
                elif axis == 1:
                    ddy += 1.0
                else:
                    ddz += 1.0
                dn = np.sqrt(ddx * ddx + ddy * ddy + ddz * ddz)
                crossings = _parity_stream(
                    v0, e1, e2, nrm, cs, to, res, i_lo, i_hi, j_lo, j_hi,
                    points[idx, 0], points[idx, 1], points[idx, 2],
                    ddx / dn, ddy / dn, ddz / dn)
                if crossings >= 0:
                    parity = crossings & 1
                    break
            if parity < 0:
                failed[idx] = 1
                bad = True
                break
            votes += parity
        if not bad and votes >= 2:
            inside[idx] = 1


def ray_parity_votes(v0, e1, e2, bins0, bins1, bins2, points, seed,
                     jitter, max_attempts):
    nrm = np.cross(e1, e2)
    norms = np.linalg.norm(nrm, axis=1)
    norms[norms == 0] = 1.0
    nrm = nrm / norms[:, None]
    n = len(points)
    inside = np.zeros(n, dtype=np.uint8)
    failed = np.zeros(n, dtype=np.uint8)
    _parity_votes_core(v0, e1, e2, nrm, bins0, bins1, bins2, points,
                       np.uint64(seed), float(jitter), int(max_attempts),
                       inside, failed)
    bad = np.nonzero(failed)[0]
    return inside, (int(bad[0]) if len(bad) else -1)


# ---------------------------------------------------------------------------
# orthographic depth rendering

@njit(cache=True, parallel=True)
def depth_render(v0, e1, e2, bins, right, up, direction, res, origin_back):
    cell_start, tri_order, gres = bins[0], bins[1], bins[8]
    lo0, lo1, c0, c1, h0, h1 = bins[2], bins[3], bins[4], bins[5], bins[6], bins[7]
    nt = v0.shape[0]
    pvec = np.empty((nt, 3), dtype=np.float64)
    det = np.empty(nt, dtype=np.float64)
    for ti in range(nt):
        pvec[ti, 0] = direction[1] * e2[ti, 2] - direction[2] * e2[ti, 1]
        pvec[ti, 1] = direction[2] * e2[ti, 0] - direction[0] * e2[ti, 2]
        pvec[ti, 2] = direction[0] * e2[ti, 1] - direction[1] * e2[ti, 0]
        det[ti] = e1[ti, 0] * pvec[ti, 0] + e1[ti, 1] * pvec[ti, 1] + e1[ti, 2] * pvec[ti, 2]

    t_img = np.full((res, res), np.inf)
    for pi in prange(res):
        u = -0.5 + (pi + 0.5) / res
        for pj in range(res):
            v = -0.5 + (pj + 0.5) / res
            ox = u * right[0] + v * up[0] - origin_back * direction[0]
            oy = u * right[1] + v * up[1] - origin_back * direction[1]
            oz = u * right[2] + v * up[2] - origin_back * direction[2]
            i_lo, i_hi = _cell_window(lo0, c0, h0, gres, u, u)
            j_lo, j_hi = _cell_window(lo1, c1, h1, gres, v, v)
            best = np.inf
            for i in range(i_lo, i_hi + 1):
                base = i * gres
                s = cell_start[base + j_lo]
                e = cell_start[base + j_hi + 1]
                for kk in range(s, e):
                    ti = tri_order[kk]
                    dd = det[ti]
                    if abs(dd) <= 1e-12:
                        continue
                    inv = 1.0 / dd
                    tvx = ox - v0[ti, 0]
                    tvy = oy - v0[ti, 1]
                    tvz = oz - v0[ti, 2]
                    a = (tvx * pvec[ti, 0] + tvy * pvec[ti, 1] + tvz * pvec[ti, 2]) * inv
                    if a < 0 or a > 1:
                        continue
                    qvx = tvy * e1[ti, 2] - tvz * e1[ti, 1]
                    qvy = tvz * e1[ti, 0] - tvx * e1[ti, 2]
                    qvz = tvx * e1[ti, 1] - tvy * e1[ti, 0]
                    b = (direction[0] * qvx + direction[1] * qvy + direction[2] * qvz) * inv
                    if b < 0 or a + b > 1:
                        continue
                    t = (e2[ti, 0] * qvx + e2[ti, 1] * qvy + e2[ti, 2] * qvz) * inv
                    if t > 0 and t < best:
                        best = t
            t_img[pi, pj] = best
    return t_img


# ---------------------------------------------------------------------------
# marching cubes sweep

@njit(cache=True)
def marching_cubes_core(field, thresh):
    m3 = field.shape[0]
    m = m3 - 1
    case = np.zeros((m, m, m), dtype=np.int32)
    needed = np.zeros((3, m3, m3, m3), dtype=np.uint8)
    nfaces = 0
    for ci in range(m):
        for cj in range(m):
            for ck in range(m):
                cc = 0
                for bit in range(8):
                    if field[ci + _CORNER[bit, 0], cj + _CORNER[bit, 1],
                             ck + _CORNER[bit, 2]] < thresh:
                        cc |= 1 << bit
                case[ci, cj, ck] = cc
                flags = EDGE_TABLE[cc]
                if flags == 0:
                    continue
                for e in range(12):
                    if flags & (1 << e):
                        lowc = _EDGE_LOW[e]
                        needed[_EDGE_AXIS[e], ci + _CORNER[lowc, 0],
                               cj + _CORNER[lowc, 1], ck + _CORNER[lowc, 2]] = 1
                row = TRI_TABLE[cc]
                for k in range(0, 16, 3):
                    if row[k] < 0:
                        break
                    nfaces += 1

    # vertex ids in (axis, i, j, k) sweep order: shared edges weld exactly and
    # the ordering matches the numpy backend's sorted unique edge keys
    edge_id = np.full((3, m3, m3, m3), -1, dtype=np.int64)
    nv = 0
    for axis in range(3):
        for gi in range(m3):
            for gj in range(m3):
                for gk in range(m3):
                    if needed[axis, gi, gj, gk]:
                        edge_id[axis, gi, gj, gk] = nv
                        nv += 1

    verts = np.empty((nv, 3), dtype=np.float64)
    for axis in range(3):
        for gi in range(m3):
            for gj in range(m3):
                for gk in range(m3):
                    vid = edge_id[axis, gi, gj, gk]
                    if vid < 0:
                        continue
                    va = np.float64(field[gi, gj, gk])
                    bi, bj, bk = gi, gj, gk
                    if axis == 0:
                        bi += 1
                    elif axis == 1:
                        bj += 1
                    else:
                        bk += 1
                    vb = np.float64(field[bi, bj, bk])
                    s = (thresh - va) / (vb - va)
                    if s < 0.0:
                        s = 0.0
                    elif s > 1.0:
                        s = 1.0
                    verts[vid, 0] = gi
                    verts[vid, 1] = gj
                    verts[vid, 2] = gk
                    verts[vid, axis] += s

    faces = np.empty((nfaces, 3), dtype=np.int32)
    fc = 0
    for ci in range(m):
        for cj in range(m):
            for ck in range(m):
                cc = case[ci, cj, ck]
                if EDGE_TABLE[cc] == 0:
                    continue
                row = TRI_TABLE[cc]
                for k in range(0, 16, 3):
                    if row[k] < 0:
                        break
                    for vv in range(3):
                        e = row[k + vv]
                        lowc = _EDGE_LOW[e]
                        faces[fc, vv] = edge_id[_EDGE_AXIS[e], ci + _CORNER[lowc, 0],
                                                cj + _CORNER[lowc, 1],
                                                ck + _CORNER[lowc, 2]]
                    fc += 1
    return verts, faces


# ---------------------------------------------------------------------------
# kd-tree nearest neighbor

@njit(cache=True, parallel=True)
def kd_query(pts, perm, dim, split, left, right, lo, hi, queries):
    nq = queries.shape[0]
    out_idx = np.empty(nq, dtype=np.int64)
    out_d2 = np.empty(nq, dtype=np.float64)
    for qi in prange(nq):
        qx, qy, qz = queries[qi, 0], queries[qi, 1], queries[qi, 2]
        best_d2 = np.inf
        best_idx = np.int64(-1)
        stack = np.empty(128, dtype=np.int64)
        sdist = np.empty(128, dtype=np.float64)
        stack[0] = 0
        sdist[0] = 0.0
        top = 1
        while top > 0:
            top -= 1
            nid = stack[top]
            if sdist[top] > best_d2:
                continue
            while left[nid] >= 0:
                d = dim[nid]
                if d == 0:
                    delta = qx - split[nid]
                elif d == 1:
                    delta = qy - split[nid]
                else:
                    delta = qz - split[nid]
                if delta < 0:
                    near = left[nid]
                    far = right[nid]
                else:
                    near = right[nid]
                    far = left[nid]
                fd = delta * delta
                if fd <= best_d2:
                    stack[top] = far
                    sdist[top] = fd
                    top += 1
                nid = near
            for k in range(lo[nid], hi[nid]):
                dx = pts[k, 0] - qx
                dy = pts[k, 1] - qy
                dz = pts[k, 2] - qz
                d2 = dx * dx + dy * dy + dz * dz
                if d2 < best_d2 or (d2 == best_d2 and perm[k] < best_idx):
                    best_d2 = d2
                    best_idx = perm[k]
        out_idx[qi] = best_idx
        out_d2[qi] = best_d2
    return out_idx, out_d2
