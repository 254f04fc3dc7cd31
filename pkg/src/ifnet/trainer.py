"""Mini-batch training of the occupancy model.

Each step draws a few shapes, regenerates a fresh point subsample for
every shape, runs the full forward, and applies one Adam update from the
taped reverse sweep.  The update uses the mean loss so the learning rate
is independent of batch sizing; the summed loss over shapes and points
is logged alongside.  Training state (weights, moments, RNG) is
serializable, and resuming reproduces the uninterrupted trajectory
bit for bit in single-threaded deterministic runs.
"""

import time

import numpy as np

from . import autodiff as ad
from . import model as mdl
from .sampler import make_batch


class TrainerConfig:
    def __init__(self, batch_size=4, r_size=1024, learning_rate=1e-4,
                 beta1=0.9, beta2=0.999, eps=1e-8, max_steps=5000,
                 val_interval=100, val_points=1024, patience=10, seed=0,
                 precision="f32"):
        self.batch_size = int(batch_size)
        self.r_size = int(r_size)
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.max_steps = int(max_steps)
        self.val_interval = int(val_interval)
        self.val_points = int(val_points)
        self.patience = int(patience)
        self.seed = int(seed)
        self.precision = str(precision)
        if min(self.batch_size, self.r_size, self.max_steps,
               self.val_interval, self.val_points) < 1:
            raise ValueError("sizes and intervals must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0.0 <= self.learning_rate:
            raise ValueError("learning rate must be >= 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("moment coefficients must lie in [0, 1)")
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be f32 or f64")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def to_dict(self):
        return {"batch_size": self.batch_size, "r_size": self.r_size,
                "learning_rate": self.learning_rate, "beta1": self.beta1,
                "beta2": self.beta2, "eps": self.eps,
                "max_steps": self.max_steps,
                "val_interval": self.val_interval,
                "val_points": self.val_points, "patience": self.patience,
                "seed": self.seed, "precision": self.precision}


def loss_minibatch(params, batch, tape=None):
    """Mean binary cross-entropy over every point of every shape in the
    batch -> (mean loss Tensor, paper-style summed loss float)."""
    logit_blocks, label_blocks = [], []
    for grid, pts, labels in batch:
        _, lg = mdl.forward(params, grid, pts, tape)
        logit_blocks.append(lg)
        label_blocks.append(labels)
    logits = ad.concat(tape, logit_blocks, axis=0)
    labels = np.concatenate(label_blocks)
    mean = ad.bce_loss(tape, logits, labels)
    return mean, float(mean.data) * logits.data.size


def validate(params, records, n_points):
    """Loss on each record's frozen leading points; consumes no RNG."""
    if not records:
        raise ValueError("no validation records")
    logit_blocks, label_blocks = [], []
    for r in records:
        k = min(n_points, r.sample_count)
        _, lg = mdl.forward(params, r.input_grid, r.points[:k])
        logit_blocks.append(lg.data)
        label_blocks.append(r.labels[:k])
    logits = ad.Tensor(np.concatenate(logit_blocks))
    return float(ad.bce_loss(None, logits, np.concatenate(label_blocks)).data)


def adam_step(params, grads, state, cfg):
    """One Adam update in place; `state` carries the moment arrays."""
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name, tensor in params.tensors.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(tensor.data)
        m = state["m"][name]
        v = state["v"][name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        tensor.data -= (cfg.learning_rate * (m / c1)
                        / (np.sqrt(v / c2) + cfg.eps))


def _fresh_opt_state(params):
    return {"t": 0,
            "m": {n: np.zeros_like(t.data) for n, t in params.tensors.items()},
            "v": {n: np.zeros_like(t.data) for n, t in params.tensors.items()}}


class TrainState:
    """Everything needed to continue a run exactly where it stopped."""

    def __init__(self, params, cfg, opt=None, step=0, best_val=None,
                 bad_vals=0, rng=None):
        self.params = params
        self.cfg = cfg
        self.opt = opt if opt is not None else _fresh_opt_state(params)
        self.step = step
        self.best_val = best_val
        self.bad_vals = bad_vals
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.history = []

    def save(self, path):
        extra = {"step": self.step,
                 "best_val": self.best_val,
                 "bad_vals": self.bad_vals,
                 "adam_t": self.opt["t"],
                 "trainer": self.cfg.to_dict(),
                 "rng": _rng_state_to_json(self.rng)}
        tensors = {}
        for n, a in self.opt["m"].items():
            tensors["m." + n] = a
        for n, a in self.opt["v"].items():
            tensors["v." + n] = a
        mdl.save_params(path, self.params, extra=extra, extra_tensors=tensors)

    @classmethod
    def load(cls, path):
        params, extra, tensors = mdl.load_params(path)
        cfg = TrainerConfig(**extra["trainer"])
        dtype = params.dtype
        opt = {"t": extra["adam_t"],
               "m": {n[2:]: a.astype(dtype) for n, a in tensors.items()
                     if n.startswith("m.")},
               "v": {n[2:]: a.astype(dtype) for n, a in tensors.items()
                     if n.startswith("v.")}}
        rng = np.random.default_rng()
        rng.bit_generator.state = _rng_state_from_json(extra["rng"])
        return cls(params, cfg, opt=opt, step=extra["step"],
                   best_val=extra["best_val"], bad_vals=extra["bad_vals"],
                   rng=rng)


def _rng_state_to_json(rng):
    state = rng.bit_generator.state
    return {"bit_generator": state["bit_generator"],
            "state": str(state["state"]["state"]),
            "inc": str(state["state"]["inc"]),
            "has_uint32": state["has_uint32"],
            "uinteger": state["uinteger"]}


def _rng_state_from_json(blob):
    return {"bit_generator": blob["bit_generator"],
            "state": {"state": int(blob["state"]), "inc": int(blob["inc"])},
            "has_uint32": blob["has_uint32"],
            "uinteger": blob["uinteger"]}


def _check_dataset(params, records):
    n = params.encoder.resolution
    for r in records:
        if r.input_grid.shape[0] != n:
            raise ValueError(
                f"shape {r.shape_id} has input resolution "
                f"{r.input_grid.shape[0]}, model expects {n}")


def train(records, val_records, params, cfg, log_path=None, ckpt_path=None,
          resume_path=None, state=None, log_file=None):
    """Run the optimization loop; returns the final TrainState.

    Batches draw min(batch_size, len(records)) distinct shapes per step.
    `ckpt_path` tracks the best validation loss; `resume_path` holds the
    full state and is refreshed at every validation and at the end.
    `log_path` gets one CSV row per step (elapsed_s is wall clock and is
    the one column exempt from reproducibility).
    """
    if not records:
        raise ValueError("no training records")
    if state is None:
        state = TrainState(params, cfg)
    else:
        params = state.params
    _check_dataset(params, records)
    if val_records:
        _check_dataset(params, val_records)
    if cfg.r_size > min(r.sample_count for r in records):
        raise ValueError("r_size exceeds the stored sample count")

    out = open(log_path, "w" if state.step == 0 else "a") if log_path else None
    if out and state.step == 0:
        out.write("step,train_loss_mean,train_loss_sum,val_loss,elapsed_s\n")
    t0 = time.monotonic()
    n_batch = min(cfg.batch_size, len(records))
    try:
        while state.step < cfg.max_steps:
            ids = state.rng.choice(len(records), size=n_batch, replace=False)
            batch = make_batch(records, ids, cfg.r_size, state.rng)
            tape = ad.Tape()
            mean, total = loss_minibatch(params, batch, tape)
            tape.backward(mean)
            grads = {n: tape.grad(t) for n, t in params.tensors.items()}
            adam_step(params, grads, state.opt, cfg)
            state.step += 1

            val = ""
            stop = False
            if val_records and state.step % cfg.val_interval == 0:
                vloss = validate(params, val_records, cfg.val_points)
                val = f"{vloss:.17g}"
                if state.best_val is None or vloss < state.best_val:
                    state.best_val = vloss
                    state.bad_vals = 0
                    if ckpt_path:
                        mdl.save_params(ckpt_path, params,
                                        extra={"step": state.step,
                                               "val_loss": vloss})
                else:
                    state.bad_vals += 1
                    stop = state.bad_vals >= cfg.patience
                if resume_path:
                    state.save(resume_path)

            row = (f"{state.step},{float(mean.data):.17g},{total:.17g},"
                   f"{val},{time.monotonic() - t0:.3f}")
            if out:
                out.write(row + "\n")
            if log_file:
                log_file(row)
            state.history.append((state.step, float(mean.data), total,
                                  None if val == "" else float(val)))
            if stop:
                break
    finally:
        if out:
            out.close()
    if ckpt_path and state.best_val is None:
        # never validated: keep the final weights as the checkpoint
        mdl.save_params(ckpt_path, params, extra={"step": state.step})
    if resume_path:
        state.save(resume_path)
    return state
