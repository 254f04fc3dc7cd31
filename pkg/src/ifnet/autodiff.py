"""Minimal reverse-mode autodiff over dense tensors.

Only the operators the occupancy network needs are provided; each op runs its
forward pass immediately, checks the result for NaN/Inf, and (when a tape is
given) records a closure computing the adjoint. The reverse sweep walks the
record in exact reverse execution order and accumulates gradients additively,
so tensors used in several places get the sum of their branch gradients.

All ops accept ``tape=None`` for inference, skipping the recording entirely.
"""

import struct

import numpy as np

from .kernels import (col2im_3x3x3, im2col_3x3x3, maxpool2_backward,
                      maxpool2_forward, trilinear_gather, trilinear_scatter)

# keep any single im2col buffer at inference time below this many bytes
_COLS_BUDGET = 256 * 1024 * 1024


class NonFiniteError(ArithmeticError):
    """A forward op produced NaN or Inf."""


class Tensor:
    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        self.data = np.asarray(data, dtype=dtype)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Tape:
    """Execution record for one forward pass."""

    def __init__(self):
        self._entries = []
        self._grads = {}

    def record(self, out, inputs, backward):
        self._entries.append((out, inputs, backward))

    def backward(self, loss, seed=None):
        """Reverse sweep from loss; seed defaults to ones."""
        g = np.ones_like(loss.data) if seed is None else np.asarray(seed, dtype=loss.dtype)
        self._grads = {id(loss): g}
        for out, inputs, fn in reversed(self._entries):
            gout = self._grads.get(id(out))
            if gout is None:
                continue
            for t, gt in zip(inputs, fn(gout)):
                if t is None or gt is None:
                    continue
                acc = self._grads.get(id(t))
                self._grads[id(t)] = gt if acc is None else acc + gt

    def grad(self, tensor):
        return self._grads.get(id(tensor))


def _out(tape, data, inputs, backward):
    if not np.isfinite(data).all():
        raise NonFiniteError("non-finite values in forward pass")
    t = Tensor(data)
    if tape is not None:
        tape.record(t, inputs, backward)
    return t


# ---------------------------------------------------------------------------
# network ops

def conv3d(tape, x, w, b):
    """3x3x3 cross-correlation, zero padding 1, stride 1."""
    cin, d, h, ww_ = x.data.shape
    cout = w.data.shape[0]
    if w.data.shape != (cout, cin, 3, 3, 3) or b.data.shape != (cout,):
        raise ValueError("conv3d weight/bias shape mismatch")
    w2 = w.data.reshape(cout, cin * 27)
    n = d * h * ww_
    wanted = n * cin * 27 * x.data.dtype.itemsize
    if tape is None and wanted > _COLS_BUDGET:
        # slab the volume along the first spatial axis to bound the buffer
        out = np.empty((cout, d, h, ww_), dtype=x.data.dtype)
        slab = max(1, int(_COLS_BUDGET / (h * ww_ * cin * 27 * x.data.dtype.itemsize)))
        for z0 in range(0, d, slab):
            z1 = min(z0 + slab, d)
            lo, hi = max(z0 - 1, 0), min(z1 + 1, d)
            cols = im2col_3x3x3(np.ascontiguousarray(x.data[:, lo:hi]))
            y = (cols @ w2.T + b.data).T.reshape(cout, hi - lo, h, ww_)
            out[:, z0:z1] = y[:, z0 - lo:z0 - lo + (z1 - z0)]
        return _out(tape, out, (), None)

    cols = im2col_3x3x3(x.data)
    y = (cols @ w2.T + b.data).T.reshape(cout, d, h, ww_)

    def backward(gout):
        g2 = gout.reshape(cout, n).T
        gw = (g2.T @ cols).reshape(w.data.shape)
        gb = g2.sum(axis=0)
        gx = col2im_3x3x3(np.ascontiguousarray(g2 @ w2), cin, d, h, ww_)
        return gx, gw, gb

    return _out(tape, np.ascontiguousarray(y), (x, w, b), backward)


def downsample2(tape, x):
    """2x2x2 max pooling; gradient goes to the argmax (first index on ties)."""
    c, d, h, w = x.data.shape
    if d % 2 or h % 2 or w % 2:
        raise ValueError("downsample2 needs even spatial dims")
    y, arg = maxpool2_forward(x.data)

    def backward(gout):
        return (maxpool2_backward(arg, np.ascontiguousarray(gout), d, h, w),)

    return _out(tape, y, (x,), backward)


def grid_coords(points, k):
    """Map domain points to clamped grid coords; returns (i0, frac)."""
    u = (np.asarray(points, dtype=np.float64) + 0.5) * k - 0.5
    u = np.clip(u, 0.0, k - 1.0)
    i0 = np.minimum(u.astype(np.int64), k - 2)
    np.maximum(i0, 0, out=i0)
    return np.ascontiguousarray(i0), np.ascontiguousarray(u - i0)


def trilinear_sample(tape, grid, points):
    """Sample a [C, K, K, K] grid at continuous domain points -> [Q, C].

    Differentiable in the grid values only; query positions are fixed.
    """
    points = np.asarray(points, dtype=np.float64)
    if np.abs(points).max(initial=0.0) > 0.5:
        raise ValueError("query outside the canonical domain")
    k = grid.data.shape[1]
    i0, frac = grid_coords(points, k)
    out = trilinear_gather(grid.data, i0, frac)

    def backward(gout):
        return (trilinear_scatter(np.ascontiguousarray(gout), i0, frac, k),)

    return _out(tape, out, (grid,), backward)


def linear(tape, x, w, b):
    if x.data.shape[1] != w.data.shape[1] or b.data.shape[0] != w.data.shape[0]:
        raise ValueError("linear shape mismatch")
    y = x.data @ w.data.T + b.data

    def backward(gout):
        return gout @ w.data, gout.T @ x.data, gout.sum(axis=0)

    return _out(tape, y, (x, w, b), backward)


def relu(tape, x):
    y = np.maximum(x.data, 0)

    def backward(gout):
        return (gout * (x.data > 0),)

    return _out(tape, y, (x,), backward)


def sigmoid(tape, x):
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    y = y.astype(d.dtype, copy=False)

    def backward(gout):
        return (gout * y * (1 - y),)

    return _out(tape, y, (x,), backward)


def reshape(tape, x, shape):
    y = x.data.reshape(tuple(shape))

    def backward(gout):
        return (gout.reshape(x.data.shape),)

    return _out(tape, np.ascontiguousarray(y), (x,), backward)


def concat(tape, tensors, axis=0):
    y = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(gout):
        splits = np.cumsum(sizes)[:-1]
        return tuple(np.split(gout, splits, axis=axis))

    return _out(tape, y, tuple(tensors), backward)


def mean_spatial(tape, x):
    """Mean over every axis but the first: [C, ...] -> [C]."""
    n = int(np.prod(x.data.shape[1:]))
    y = x.data.reshape(x.data.shape[0], n).mean(axis=1)

    def backward(gout):
        g = np.broadcast_to((gout / n)[:, None], (x.data.shape[0], n))
        return (g.reshape(x.data.shape).astype(x.data.dtype, copy=False),)

    return _out(tape, y, (x,), backward)


def broadcast_rows(tape, v, q):
    """Tile a [C] vector into [Q, C] rows; adjoint sums over rows."""
    y = np.broadcast_to(v.data[None, :], (q, v.data.shape[0])).copy()

    def backward(gout):
        return (gout.sum(axis=0),)

    return _out(tape, y, (v,), backward)


def bce_loss(tape, logits, labels):
    """Mean softplus-stabilized binary cross-entropy from logits."""
    y = np.asarray(labels, dtype=logits.dtype)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    x = logits.data
    per = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    loss = per.mean(dtype=np.float64)

    def backward(gout):
        p = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        g = (p - y) / x.size * gout
        return (g.astype(x.dtype, copy=False),)

    return _out(tape, np.float64(loss), (logits,), backward)


# ---------------------------------------------------------------------------
# finite-difference verification

def grad_check(fn, tensors, eps=1e-5, seed=0):
    """Max relative error between tape gradients and central differences.

    fn(tape, *tensors) must return a single Tensor; the output is contracted
    with a fixed random projection so any output shape reduces to a scalar.
    """
    rng = np.random.default_rng(seed)
    tape = Tape()
    out = fn(tape, *tensors)
    proj = rng.standard_normal(out.data.shape)
    tape.backward(out, seed=proj)

    def value():
        return float((fn(None, *tensors).data * proj).sum())

    worst = 0.0
    for t in tensors:
        analytic = tape.grad(t)
        if analytic is None:
            analytic = np.zeros_like(t.data)
        t.data = np.ascontiguousarray(t.data)  # flat view must alias t.data
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            fp = value()
            flat[i] = keep - eps
            fm = value()
            flat[i] = keep
            num = (fp - fm) / (2 * eps)
            ana = float(analytic.reshape(-1)[i])
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-6)
            worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# tensor dump format (debugging aid)

IFTN_MAGIC = b"IFTN"
IFTN_VERSION = 1


def save_tensor(path, tensor):
    data = np.ascontiguousarray(np.asarray(tensor.data if isinstance(tensor, Tensor)
                                           else tensor, dtype=np.float64))
    with open(path, "wb") as f:
        f.write(IFTN_MAGIC)
        f.write(struct.pack("<II", IFTN_VERSION, data.ndim))
        f.write(struct.pack(f"<{data.ndim}Q", *data.shape))
        f.write(data.tobytes())


def load_tensor(path):
    with open(path, "rb") as f:
        if f.read(4) != IFTN_MAGIC:
            raise ValueError("not a tensor dump")
        version, rank = struct.unpack("<II", f.read(8))
        if version != IFTN_VERSION:
            raise ValueError(f"unsupported tensor dump version {version}")
        dims = struct.unpack(f"<{rank}Q", f.read(8 * rank))
        data = np.frombuffer(f.read(), dtype="<f8").reshape(dims)
    return Tensor(data.copy())
