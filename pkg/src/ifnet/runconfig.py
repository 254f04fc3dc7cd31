"""Flat key = value run configuration.

One small text file describes a whole experiment: the task to generate
data for, network architecture, sampling, training, meshing and metric
settings. Unknown keys are rejected and every value is range-checked at
load time, so a typo fails before any compute is spent. Lines starting
with '#' (or trailing '# ...' fragments) are comments; re-serializing a
loaded config reproduces the input minus those.

A few keys accept the literal value ``auto`` and resolve from the task:
``input_resolution`` (32 for sparse clouds and voxel_32, 128 otherwise),
``cloud_points`` (300 sparse / 3000 dense; unused elsewhere) and
``query_offset`` (one input cell, 1/N).
"""

import os

from .mesher import MesherConfig
from .model import ConfigError, DecoderConfig, EncoderConfig, QueryConfig
from .sampler import SamplerConfig
from .trainer import TrainerConfig

TASKS = ("pointcloud_sparse", "pointcloud_dense", "voxel_32", "voxel_128",
         "single_view")

AUTO = "auto"

_TASK_RESOLUTION = {
    "pointcloud_sparse": 32,
    "pointcloud_dense": 128,
    "voxel_32": 32,
    "voxel_128": 128,
    "single_view": 128,
}
# voxel tasks carry no point cloud; single-view counts come from the
# depth image instead, hence no entries
_TASK_CLOUD = {
    "pointcloud_sparse": 300,
    "pointcloud_dense": 3000,
}


class _Field:
    def __init__(self, default, parse, check, fmt=None):
        self.default = default
        self.parse = parse
        self.check = check
        self.fmt = fmt or str


def _int(default, lo=None, hi=None, auto=False):
    def parse(key, s):
        if auto and s == AUTO:
            return AUTO
        try:
            return int(s)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got '{s}'") from None

    def check(key, v):
        if auto and v == AUTO:
            return
        if not isinstance(v, int) or isinstance(v, bool):
            raise ConfigError(f"{key}: expected an integer, got {v!r}")
        if lo is not None and v < lo:
            raise ConfigError(f"{key}: must be >= {lo}, got {v}")
        if hi is not None and v > hi:
            raise ConfigError(f"{key}: must be <= {hi}, got {v}")

    return _Field(default, parse, check)


def _float(default, lo=None, hi=None, lo_open=False, hi_open=False,
           auto=False):
    def parse(key, s):
        if auto and s == AUTO:
            return AUTO
        try:
            return float(s)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got '{s}'") from None

    def check(key, v):
        if auto and v == AUTO:
            return
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {v!r}")
        v = float(v)
        if v != v:
            raise ConfigError(f"{key}: must not be NaN")
        if lo is not None and (v <= lo if lo_open else v < lo):
            op = ">" if lo_open else ">="
            raise ConfigError(f"{key}: must be {op} {lo}, got {v}")
        if hi is not None and (v >= hi if hi_open else v > hi):
            op = "<" if hi_open else "<="
            raise ConfigError(f"{key}: must be {op} {hi}, got {v}")

    def fmt(v):
        return AUTO if v == AUTO else repr(float(v))

    return _Field(default, parse, check, fmt)


def _choice(default, options):
    def parse(key, s):
        return s

    def check(key, v):
        if v not in options:
            raise ConfigError(
                f"{key}: must be one of {', '.join(options)}; got '{v}'")

    return _Field(default, parse, check)


def _ints(default, lo=1):
    def parse(key, s):
        try:
            return tuple(int(p.strip()) for p in s.split(","))
        except ValueError:
            raise ConfigError(
                f"{key}: expected comma-separated integers, got '{s}'"
            ) from None

    def check(key, v):
        if not isinstance(v, (tuple, list)) or len(v) == 0:
            raise ConfigError(f"{key}: expected a non-empty integer list")
        for p in v:
            if not isinstance(p, int) or isinstance(p, bool) or p < lo:
                raise ConfigError(f"{key}: entries must be integers >= {lo}")

    def fmt(v):
        return ",".join(str(p) for p in v)

    return _Field(tuple(default), parse, check, fmt)


def _text(default):
    def parse(key, s):
        return s

    def check(key, v):
        if not isinstance(v, str) or not v:
            raise ConfigError(f"{key}: expected a non-empty string")

    return _Field(default, parse, check)


_SCHEMA = {
    # experiment
    "task": _choice("voxel_32", TASKS),
    "seed": _int(0, lo=0),
    "out_dir": _text("run"),
    # data generation
    "shape_count": _int(63, lo=1),
    "shape_kinds": _text("sphere,box,union2,capsule_figure"),
    "val_frac": _float(0.05, lo=0.0, hi=1.0, hi_open=True),
    "test_frac": _float(0.16, lo=0.0, hi=1.0, hi_open=True),
    "cloud_points": _int(AUTO, lo=1, auto=True),
    "depth_resolution": _int(64, lo=1),
    # architecture
    "input_resolution": _int(AUTO, lo=2, auto=True),
    "scales": _int(4, lo=2),
    "channels": _ints((16, 32, 64, 128)),
    "convs_per_scale": _int(2, lo=1),
    "query_offset": _float(AUTO, lo=0.0, hi=0.5, lo_open=True, hi_open=True,
                           auto=True),
    "decoder_hidden": _ints((256, 256)),
    # training-point sampling
    "sample_count": _int(50000, lo=1),
    "sigma1": _float(0.01, lo=0.0, lo_open=True),
    "sigma2": _float(0.1, lo=0.0, lo_open=True),
    "sample_ratio": _float(0.5, lo=0.0, hi=1.0),
    # optimization
    "batch_size": _int(4, lo=1),
    "r_size": _int(1024, lo=1),
    "learning_rate": _float(1e-4, lo=0.0),
    "beta1": _float(0.9, lo=0.0, hi=1.0, hi_open=True),
    "beta2": _float(0.999, lo=0.0, hi=1.0, hi_open=True),
    "adam_eps": _float(1e-8, lo=0.0, lo_open=True),
    "max_steps": _int(5000, lo=1),
    "val_interval": _int(100, lo=1),
    "val_points": _int(1024, lo=1),
    "patience": _int(10, lo=1),
    "precision": _choice("f32", ("f32", "f64")),
    # surface extraction
    "output_resolution": _int(128, lo=2),
    "iso_threshold": _float(0.5, lo=0.0, hi=1.0, lo_open=True, hi_open=True),
    "chunk": _int(8192, lo=1),
    # evaluation
    "metric_points": _int(100000, lo=1),
}


class RunConfig:
    """Validated settings bundle; attribute access resolves auto values."""

    def __init__(self, **overrides):
        values = {}
        explicit = []
        for key, val in overrides.items():
            field = _SCHEMA.get(key)
            if field is None:
                raise ConfigError(f"unknown config key '{key}'")
            if isinstance(val, list):
                val = tuple(val)
            field.check(key, val)
            values[key] = val
            explicit.append(key)
        for key, field in _SCHEMA.items():
            values.setdefault(key, field.default)
        self._values = values
        self._explicit = explicit
        self._cross_check()

    def __getattr__(self, name):
        if name.startswith("_"):
            raise AttributeError(name)
        try:
            v = self._values[name]
        except KeyError:
            raise AttributeError(name) from None
        if v == AUTO:
            v = self._resolve_auto(name)
        return v

    def _resolve_auto(self, name):
        if name == "input_resolution":
            return _TASK_RESOLUTION[self._values["task"]]
        if name == "cloud_points":
            return _TASK_CLOUD.get(self._values["task"], 0)
        if name == "query_offset":
            return 1.0 / self.input_resolution
        raise AttributeError(name)

    def _cross_check(self):
        v = self._values
        if len(v["channels"]) != v["scales"]:
            raise ConfigError(
                f"channels lists {len(v['channels'])} widths for "
                f"{v['scales']} scales")
        if not v["sigma1"] < v["sigma2"]:
            raise ConfigError("sigma1 must be smaller than sigma2")
        if v["val_frac"] + v["test_frac"] >= 1.0:
            raise ConfigError("val_frac + test_frac must leave room to train")
        from .geometry import KINDS
        if not self.kinds():
            raise ConfigError("shape_kinds: need at least one kind")
        for kind in self.kinds():
            if kind not in KINDS:
                raise ConfigError(
                    f"shape_kinds: unknown kind '{kind}' "
                    f"(choose from {', '.join(sorted(KINDS))})")
        # building the per-module configs runs their own validation too
        try:
            self.encoder_config()
            self.decoder_config()
            self.query_config()
            self.sampler_config()
            self.trainer_config()
            self.mesher_config()
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def kinds(self):
        return tuple(k.strip() for k in self._values["shape_kinds"].split(",")
                     if k.strip())

    # builders for the per-module config objects

    def encoder_config(self):
        return EncoderConfig(resolution=self.input_resolution,
                             scales=self.scales,
                             channels=tuple(self.channels),
                             convs_per_scale=self.convs_per_scale)

    def decoder_config(self):
        return DecoderConfig(hidden=tuple(self.decoder_hidden))

    def query_config(self):
        return QueryConfig(offset=self.query_offset)

    def sampler_config(self):
        return SamplerConfig(count=self.sample_count, sigma1=self.sigma1,
                             sigma2=self.sigma2, ratio=self.sample_ratio,
                             seed=self.seed)

    def trainer_config(self):
        return TrainerConfig(batch_size=self.batch_size, r_size=self.r_size,
                             learning_rate=self.learning_rate,
                             beta1=self.beta1, beta2=self.beta2,
                             eps=self.adam_eps, max_steps=self.max_steps,
                             val_interval=self.val_interval,
                             val_points=self.val_points,
                             patience=self.patience, seed=self.seed,
                             precision=self.precision)

    def mesher_config(self):
        return MesherConfig(resolution=self.output_resolution,
                            threshold=self.iso_threshold, chunk=self.chunk)

    def with_overrides(self, **kw):
        merged = {k: self._values[k] for k in self._explicit}
        merged.update(kw)
        return RunConfig(**merged)

    def dumps(self, all_keys=False):
        keys = list(_SCHEMA) if all_keys else list(self._explicit)
        lines = [f"{k} = {_SCHEMA[k].fmt(self._values[k])}" for k in keys]
        return "".join(ln + "\n" for ln in lines)

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self._values == other._values

    def __repr__(self):
        task = self._values["task"]
        return f"RunConfig(task={task}, {len(self._explicit)} explicit keys)"


def loads(text, path="<config>"):
    parsed = {}
    for no, line in enumerate(text.splitlines(), start=1):
        ln = line.split("#", 1)[0].strip()
        if not ln:
            continue
        if "=" not in ln:
            raise ConfigError(f"{path}:{no}: expected 'key = value'")
        key, _, val = ln.partition("=")
        key, val = key.strip(), val.strip()
        if not key or not val:
            raise ConfigError(f"{path}:{no}: expected 'key = value'")
        field = _SCHEMA.get(key)
        if field is None:
            raise ConfigError(f"{path}:{no}: unknown config key '{key}'")
        if key in parsed:
            raise ConfigError(f"{path}:{no}: duplicate key '{key}'")
        parsed[key] = field.parse(key, val)
    return RunConfig(**parsed)


def load_config(path):
    path = os.fspath(path)
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return loads(text, path=path)


def save_config(path, cfg, all_keys=False):
    with open(os.fspath(path), "w") as f:
        f.write(cfg.dumps(all_keys=all_keys))
