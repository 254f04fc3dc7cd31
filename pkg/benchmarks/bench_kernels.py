"""Throughput comparison of the two kernel backends.

Run without arguments to benchmark numba against the pure-NumPy fallback
side by side; the script re-executes itself once per backend because the
choice is fixed at import time by IFNET_BACKEND:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --repeats 5

Workload sizes are desk scale: what one training step or one 64^3 field
evaluation actually pushes through each kernel. Agreement between the
backends is covered by the test suite; this script only measures time.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def build_workloads():
    """Name -> zero-argument callable, closed over prebuilt inputs."""
    import ifnet.geometry as geo
    from ifnet import kernels

    rng = np.random.default_rng(7)
    work = {}

    x_conv = rng.standard_normal((16, 32, 32, 32))
    cols = kernels.im2col_3x3x3(x_conv)
    work["im2col_3x3x3 [16ch 32^3]"] = lambda: kernels.im2col_3x3x3(x_conv)
    work["col2im_3x3x3 [16ch 32^3]"] = \
        lambda: kernels.col2im_3x3x3(cols, 16, 32, 32, 32)

    x_pool = rng.standard_normal((32, 64, 64, 64))
    _, arg = kernels.maxpool2_forward(x_pool)
    gy = rng.standard_normal((32, 32, 32, 32))
    work["maxpool2_forward [32ch 64^3]"] = \
        lambda: kernels.maxpool2_forward(x_pool)
    work["maxpool2_backward [32ch 64^3]"] = \
        lambda: kernels.maxpool2_backward(arg, gy, 64, 64, 64)

    grid = rng.standard_normal((32, 64, 64, 64))
    n_q = 50000
    i0 = rng.integers(0, 63, (n_q, 3)).astype(np.int64)
    frac = rng.random((n_q, 3))
    gout = rng.standard_normal((n_q, 32))
    work["trilinear_gather [50k pts, 32ch 64^3]"] = \
        lambda: kernels.trilinear_gather(grid, i0, frac)
    work["trilinear_scatter [50k pts, 32ch 64^3]"] = \
        lambda: kernels.trilinear_scatter(gout, i0, frac, 64)

    mesh = geo.icosphere(0.4, 5)
    from ifnet.geometry.occupancy import JITTER, MAX_ATTEMPTS, mesh_ray_accel
    v0, e1, e2, bins = mesh_ray_accel(mesh)
    pts = rng.uniform(-0.5, 0.5, (2000, 3))
    work["ray_parity_votes [2k pts, 20k faces]"] = \
        lambda: kernels.ray_parity_votes(v0, e1, e2, bins[0], bins[1],
                                         bins[2], pts, np.uint64(1), JITTER,
                                         MAX_ATTEMPTS)

    from ifnet.geometry.depth import ORIGIN_BACK, view_basis
    right, up, d = view_basis((0.3, -0.5, 0.8))
    tv = mesh.triangles()
    pu, pv = tv @ right, tv @ up
    centers = np.stack([(pu.min(1) + pu.max(1)) / 2,
                        (pv.min(1) + pv.max(1)) / 2], axis=1)
    halves = np.stack([(pu.max(1) - pu.min(1)) / 2,
                       (pv.max(1) - pv.min(1)) / 2], axis=1)
    dbins = kernels.build_tri_bins(centers, halves).as_args()
    work["depth_render [128^2 px, 20k faces]"] = \
        lambda: kernels.depth_render(v0, e1, e2, dbins, right, up, d, 128,
                                     ORIGIN_BACK)

    ax = -0.5 + (np.arange(96) + 0.5) / 96
    xx, yy, zz = np.meshgrid(ax, ax, ax, indexing="ij")
    r = np.sqrt(xx ** 2 + yy ** 2 + zz ** 2)
    field = 1.0 / (1.0 + np.exp(-(0.4 - r) * 96.0))
    work["marching_cubes_core [96^3]"] = \
        lambda: kernels.marching_cubes_core(field, 0.5)

    tree = kernels.kd_build(rng.uniform(-0.5, 0.5, (50000, 3)))
    queries = rng.uniform(-0.5, 0.5, (5000, 3))
    work["kd_query [5k queries vs 50k pts]"] = \
        lambda: kernels.kd_query(tree.pts, tree.perm, tree.dim, tree.split,
                                 tree.left, tree.right, tree.lo, tree.hi,
                                 queries)
    return work


def run_backend(repeats):
    from ifnet import kernels

    results = {}
    for name, fn in build_workloads().items():
        fn()  # warm: jit compile / first-touch allocations
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        results[name] = best
    return {"backend": kernels.BACKEND, "times": results}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=3,
                    help="timed runs per kernel; the minimum is reported")
    ap.add_argument("--one", choices=("numba", "numpy"),
                    help="benchmark a single backend and emit JSON "
                         "(used by the parent process)")
    args = ap.parse_args(argv)

    if args.one:
        os.environ.setdefault("IFNET_BACKEND", args.one)
        out = run_backend(args.repeats)
        if out["backend"] != args.one:
            sys.exit(f"wanted backend {args.one}, got {out['backend']}")
        print(json.dumps(out))
        return

    reports = {}
    for backend in ("numba", "numpy"):
        env = dict(os.environ, IFNET_BACKEND=backend)
        proc = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--one", backend,
             "--repeats", str(args.repeats)],
            env=env, capture_output=True, text=True)
        if proc.returncode:
            sys.exit(f"{backend} run failed:\n{proc.stderr}")
        reports[backend] = json.loads(proc.stdout.splitlines()[-1])["times"]

    width = max(map(len, reports["numba"]))
    print(f"{'kernel':<{width}}  {'numba':>10}  {'numpy':>10}  {'speedup':>8}")
    for name, t_nb in reports["numba"].items():
        t_np = reports["numpy"][name]
        print(f"{name:<{width}}  {t_nb:>9.4f}s  {t_np:>9.4f}s  "
              f"{t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
