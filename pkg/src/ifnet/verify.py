"""Numerical property battery behind the `verify` command.

Every check recomputes its expected answer from an independent route
(closed-form formulas, brute force, finite differences, analytic
distance fields) and reports the worst error it saw. The last check
inverts the logic: it feeds the gradient checker a deliberately
sabotaged adjoint and passes only if the checker flags it, guarding
against a checker that silently agrees with everything.
"""

import time

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from . import model as M
from .mesher import marching_cubes
from .metrics import KdTree, chamfer_l2


class CheckResult:
    def __init__(self, name, passed, max_err, note=""):
        self.name = name
        self.passed = bool(passed)
        self.max_err = float(max_err)
        self.note = note
        self.seconds = 0.0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        note = f"  [{self.note}]" if self.note else ""
        return (f"{status}  {self.name:<44s} max err {self.max_err:9.3g}"
                f"  ({self.seconds:5.1f}s){note}")


def check_trilinear_formula():
    """100 random cases against the direct 8-corner blend, plus the node,
    midpoint and constant-grid identities."""
    rng = np.random.default_rng(8)
    k = 6
    worst = 0.0
    for _ in range(100):
        g = rng.standard_normal((2, k, k, k))
        p = rng.uniform(-0.5, 0.5, (4, 3))
        out = ad.trilinear_sample(None, ad.Tensor(g), p).data
        u = np.clip((p + 0.5) * k - 0.5, 0, k - 1)
        i0 = np.minimum(u.astype(int), k - 2)
        f = u - i0
        ref = np.zeros((4, 2))
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    w = (f[:, 0] if dx else 1 - f[:, 0]) * \
                        (f[:, 1] if dy else 1 - f[:, 1]) * \
                        (f[:, 2] if dz else 1 - f[:, 2])
                    ref += w[:, None] * g[:, i0[:, 0] + dx, i0[:, 1] + dy,
                                          i0[:, 2] + dz].T
        worst = max(worst, float(np.abs(out - ref).max()))

    g = rng.standard_normal((1, 8, 8, 8))
    idx = np.array([[1, 2, 3], [0, 0, 7], [7, 7, 7]])
    node = ad.trilinear_sample(None, ad.Tensor(g), -0.5 + (idx + 0.5) / 8).data
    worst = max(worst, float(np.abs(
        node[:, 0] - g[0, idx[:, 0], idx[:, 1], idx[:, 2]]).max()))
    mid = ad.trilinear_sample(
        None, ad.Tensor(g),
        np.array([[-0.5 + 2.0 / 8, -0.5 + 3.5 / 8, -0.5 + 4.5 / 8]])).data
    worst = max(worst, abs(float(mid[0, 0]) -
                           (g[0, 1, 3, 4] + g[0, 2, 3, 4]) / 2))
    flat = ad.trilinear_sample(None, ad.Tensor(np.full((1, 4, 4, 4), 2.25)),
                               rng.uniform(-0.5, 0.5, (50, 3))).data
    worst = max(worst, float(np.abs(flat - 2.25).max()))
    return worst < 1e-12, worst


def check_per_op_gradients():
    """Central finite differences against every recorded adjoint."""
    rng = np.random.default_rng(40)
    x4 = ad.Tensor(rng.standard_normal((2, 5, 5, 5)))
    w4 = ad.Tensor(rng.standard_normal((3, 2, 3, 3, 3)) * 0.3)
    b4 = ad.Tensor(rng.standard_normal(3) * 0.1)
    x6 = ad.Tensor(rng.standard_normal((2, 6, 6, 6)))
    xm = ad.Tensor(rng.standard_normal((7, 4)))
    wm = ad.Tensor(rng.standard_normal((3, 4)) * 0.4)
    bm = ad.Tensor(rng.standard_normal(3) * 0.1)
    # keep relu inputs away from the kink and downsample2 away from ties
    xr = ad.Tensor(np.where(np.abs(xm.data) < 0.2, 0.5, xm.data))
    logits = ad.Tensor(rng.standard_normal(30))
    labels = (rng.random(30) < 0.5).astype(np.float64)
    pts = rng.uniform(-0.45, 0.45, (9, 3))
    vec = ad.Tensor(rng.standard_normal(4))

    cases = [
        ("conv3d", lambda t: ad.conv3d(t, x4, w4, b4), [x4, w4, b4]),
        ("downsample2", lambda t: ad.downsample2(t, x6), [x6]),
        ("trilinear_sample",
         lambda t: ad.trilinear_sample(t, x4, pts), [x4]),
        ("linear", lambda t: ad.linear(t, xm, wm, bm), [xm, wm, bm]),
        ("relu", lambda t: ad.relu(t, xr), [xr]),
        ("sigmoid", lambda t: ad.sigmoid(t, xm), [xm]),
        ("reshape", lambda t: ad.reshape(t, xm, (4, 7)), [xm]),
        ("concat", lambda t: ad.concat(t, [xm, xr], axis=1), [xm, xr]),
        ("mean_spatial", lambda t: ad.mean_spatial(t, x4), [x4]),
        ("broadcast_rows", lambda t: ad.broadcast_rows(t, vec, 6), [vec]),
        ("bce_loss", lambda t: ad.bce_loss(t, logits, labels), [logits]),
    ]
    worst = 0.0
    for name, fn, tensors in cases:
        def wrapped(tape, *ts, _fn=fn):
            return _fn(tape)
        err = ad.grad_check(wrapped, tensors, eps=1e-5)
        worst = max(worst, err)
    return worst < 1e-6, worst


def _tiny_params(seed=3):
    enc = M.EncoderConfig(resolution=8, scales=2, channels=(2, 3),
                          convs_per_scale=1)
    return M.init_params(enc, M.DecoderConfig((8,)), seed=seed)


def check_composite_gradient():
    """encode -> feature extraction -> decode, differentiated end to end."""
    params = _tiny_params()
    rng = np.random.default_rng(30)
    x = rng.random((8, 8, 8))
    pts = rng.uniform(-0.45, 0.45, (6, 3))
    labels = (rng.random(6) < 0.5).astype(np.float64)
    names = list(params.tensors)
    tensors = [params.tensors[n] for n in names]

    def fn(tape, *ts):
        _, logits = M.forward(params, x, pts, tape=tape)
        return ad.bce_loss(tape, logits, labels)

    err = ad.grad_check(fn, tensors, eps=1e-5)
    return err < 1e-4, err


def check_occupancy_oracle():
    """Ray-cast inside tests vs analytic signed distances, 10k points per
    shape; only a 1e-5 band around the true surface is excused."""
    rng = np.random.default_rng(101)
    shapes = [
        (geo.icosphere(0.4, 7),  # tessellation error ~7e-6, below the band
         lambda p: geo.sphere_sdf(p, 0.4)),
        (geo.box_mesh((1.0, 0.6, 0.35)),
         lambda p: geo.box_sdf(p, (0.5, 0.3, 0.175))),
        (geo.capsule_mesh((0.0, -0.2, 0.0), (0.1, 0.25, 0.05), 0.12,
                          segments=384, rings=128),
         lambda p: geo.capsule_sdf(p, (0.0, -0.2, 0.0), (0.1, 0.25, 0.05),
                                   0.12)),
    ]
    bad = 0
    for mesh, sdf in shapes:
        pts = rng.uniform(-0.5, 0.5, (10000, 3))
        lab = geo.occupancy_oracle(mesh, pts)
        sd = sdf(pts)
        far = np.abs(sd) > 1e-5
        bad += int((lab[far] != (sd[far] > 0)).sum())
    return bad == 0, bad


def check_marching_cubes():
    """Smooth analytic sphere field at 64^3: closed, oriented, vertices on
    the 0.4 radius within one cell, Chamfer to an icosphere < 1e-4."""
    m = 64
    ax = -0.5 + (np.arange(m) + 0.5) / m
    xx, yy, zz = np.meshgrid(ax, ax, ax, indexing="ij")
    r = np.sqrt(xx ** 2 + yy ** 2 + zz ** 2)
    field = 1.0 / (1.0 + np.exp(-(0.4 - r) * 64.0))
    mesh = marching_cubes(field, 0.5)

    if not mesh.is_watertight():
        return False, np.inf
    e = np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]],
                        mesh.faces[:, [2, 0]]])
    directed = set(map(tuple, e.tolist()))
    if len(directed) != len(e):
        return False, np.inf  # a directed edge repeats: inconsistent winding
    radii = np.linalg.norm(mesh.vertices, axis=1)
    worst = float(np.abs(radii - 0.4).max())
    if worst > 1.0 / 64:
        return False, worst
    ch = chamfer_l2(mesh, geo.icosphere(0.4, 5), n_points=20000, seed=0)
    return ch < 1e-4, max(worst, ch)


def check_kd_tree():
    """Nearest neighbors against brute force, ties to the lowest index."""
    rng = np.random.default_rng(55)
    ref = rng.random((1000, 3))
    q = rng.random((1000, 3))
    idx, d2 = KdTree(ref).query(q)
    delta = ref[None, :, :] - q[:, None, :]
    dist = (delta ** 2).sum(axis=2)
    brute = dist.argmin(axis=1)
    mism = int((idx != brute).sum())
    err = float(np.abs(d2 - dist[np.arange(len(q)), brute]).max())
    return mism == 0 and err < 1e-12, max(float(mism), err)


def _shift_protocol(params, forward):
    """Max output change when content and queries shift by one coarse cell."""
    rng = np.random.default_rng(22)
    x = np.zeros((64, 64, 64))
    blob = (rng.random((6, 6, 6)) < 0.5).astype(np.float64)
    x[28:34, 29:35, 27:33] = blob
    x2 = np.zeros_like(x)
    x2[32:38, 29:35, 27:33] = blob
    pts = rng.uniform(-0.08, 0.0, (40, 3)) + np.array([0.0, 0.02, -0.02])
    pts2 = pts + np.array([4 / 64.0, 0.0, 0.0])
    a = forward(params, x, pts)[0].data
    b = forward(params, x2, pts2)[0].data
    return float(np.abs(a - b).max())


def check_shift_equivariance():
    enc = M.EncoderConfig(resolution=64, scales=3, channels=(4, 6, 8),
                          convs_per_scale=1)
    params = M.init_params(enc, M.DecoderConfig((16,)), seed=21)
    assert M.receptive_radius(enc, params.query) + 4 <= 28
    dev = _shift_protocol(params, M.forward)
    return dev < 1e-5, dev


def check_baseline_contrast():
    """The pooled-code model reads raw coordinates, so the identical shift
    protocol must move its output at least 10x more."""
    enc = M.EncoderConfig(resolution=64, scales=3, channels=(4, 6, 8),
                          convs_per_scale=1)
    params = M.init_params(enc, M.DecoderConfig((16,)), seed=21)
    base = M.init_baseline_params(enc, M.DecoderConfig((16,)), seed=21)
    dev = _shift_protocol(params, M.forward)
    dev_b = _shift_protocol(base, M.baseline_forward)
    ratio = dev_b / max(dev, 1e-300)
    return dev_b >= 10 * dev, ratio


def check_adjoint_sentinel():
    """A conv whose recorded input adjoint carries the wrong sign must make
    the gradient check fail loudly; otherwise the checker is broken."""
    rng = np.random.default_rng(60)
    x = ad.Tensor(rng.standard_normal((1, 4, 4, 4)))
    w = ad.Tensor(rng.standard_normal((2, 1, 3, 3, 3)) * 0.3)
    b = ad.Tensor(rng.standard_normal(2) * 0.1)

    def flipped(tape, t):
        # identity forward, negated adjoint: the sign error under test
        return ad._out(tape, t.data.copy(), (t,), lambda g: (-g,))

    def fn(tape, xx, ww, bb):
        return ad.conv3d(tape, flipped(tape, xx), ww, bb)

    err = ad.grad_check(fn, [x, w, b], eps=1e-5)
    return err > 0.1, err


CHECKS = [
    ("trilinear vs direct 8-corner formula", check_trilinear_formula),
    ("per-op gradients vs finite differences", check_per_op_gradients),
    ("composite model gradient", check_composite_gradient),
    ("occupancy oracle vs analytic SDF signs", check_occupancy_oracle),
    ("marching cubes on an analytic sphere", check_marching_cubes),
    ("kd-tree vs brute-force nearest neighbor", check_kd_tree),
    ("shift equivariance of the feature model", check_shift_equivariance),
    ("pooled-baseline contrast (>= 10x)", check_baseline_contrast),
    ("checker flags a sabotaged conv adjoint", check_adjoint_sentinel),
]


def run_battery(verbose=False):
    results = []
    for name, fn in CHECKS:
        t0 = time.monotonic()
        passed, err = fn()
        res = CheckResult(name, passed, err)
        res.seconds = time.monotonic() - t0
        results.append(res)
        if verbose:
            print(res.line())
    if verbose:
        n_ok = sum(r.passed for r in results)
        print(f"{n_ok}/{len(results)} checks passed")
    return results
