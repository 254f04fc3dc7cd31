"""Backend dispatch for the hot numeric kernels.

Two interchangeable implementations exist: ``_numba`` (JIT-compiled, the
default) and ``_numpy`` (pure vectorized NumPy). Selection happens once at
import time via the ``IFNET_BACKEND`` environment variable:

    IFNET_BACKEND=numba   require the numba backend (error if unavailable)
    IFNET_BACKEND=numpy   force the pure-NumPy fallback
    IFNET_BACKEND=auto    numba if importable, else numpy (default)

Both backends implement the same function set with identical semantics;
``benchmarks/bench_kernels.py`` compares their throughput.
"""

import os

_requested = os.environ.get("IFNET_BACKEND", "auto").strip().lower()

if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"IFNET_BACKEND={_requested!r} not recognized (use auto, numba or numpy)"
    )

if _requested == "numpy":
    from . import _numpy as _impl

    BACKEND = "numpy"
else:
    try:
        from . import _numba as _impl

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        from . import _numpy as _impl

        BACKEND = "numpy"

im2col_3x3x3 = _impl.im2col_3x3x3
col2im_3x3x3 = _impl.col2im_3x3x3
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward
trilinear_gather = _impl.trilinear_gather
trilinear_scatter = _impl.trilinear_scatter
ray_parity_votes = _impl.ray_parity_votes
depth_render = _impl.depth_render
marching_cubes_core = _impl.marching_cubes_core
kd_query = _impl.kd_query

from .structures import build_tri_bins, kd_build  # noqa: E402  (backend-independent)
