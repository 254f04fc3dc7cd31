"""The IF-Net model.

A voxel grid is pushed through a small conv trunk that emits one feature
grid per scale, each half the resolution of the previous one.  Occupancy
at a continuous point is decoded from trilinear feature lookups at the
point and its six axis neighbors, gathered across every scale, so the
decision depends on shape structure around the point rather than on the
point's absolute coordinates.  A global-latent baseline (single pooled
code plus raw coordinates) is included for contrast experiments.
"""

import json
import struct

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import VoxelGrid

CHECKPOINT_MAGIC = b"IFCK"
CHECKPOINT_VERSION = 1

# query pattern around a point: itself, then +-offset along each axis
OFFSET_PATTERN = np.array([
    (0, 0, 0),
    (1, 0, 0), (-1, 0, 0),
    (0, 1, 0), (0, -1, 0),
    (0, 0, 1), (0, 0, -1),
], dtype=np.float64)


class ConfigError(ValueError):
    """A model configuration violates its constraints."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed or incompatible."""


class EncoderConfig:
    """Conv trunk shape: input resolution, scale count, channel widths."""

    def __init__(self, resolution=32, scales=4, channels=(16, 32, 64, 128),
                 convs_per_scale=2):
        self.resolution = int(resolution)
        self.scales = int(scales)
        self.channels = tuple(int(c) for c in channels)
        self.convs_per_scale = int(convs_per_scale)
        if self.scales < 2:
            raise ConfigError("need at least two scales")
        if len(self.channels) != self.scales:
            raise ConfigError("channels must list one width per scale")
        if min(self.channels) < 1:
            raise ConfigError("channel widths must be positive")
        if self.convs_per_scale < 1:
            raise ConfigError("convs_per_scale must be positive")
        step = 2 ** (self.scales - 1)
        if self.resolution % step or self.resolution < 2 * step:
            # trilinear lookups need at least 2 cells at the coarsest scale
            raise ConfigError(
                f"resolution {self.resolution} does not support {self.scales} "
                f"halving scales")

    def grid_resolutions(self):
        return [self.resolution >> k for k in range(self.scales)]

    def to_dict(self):
        return {"resolution": self.resolution, "scales": self.scales,
                "channels": list(self.channels),
                "convs_per_scale": self.convs_per_scale}


class QueryConfig:
    """Distance of the six axis-neighbor queries from the point."""

    def __init__(self, offset):
        self.offset = float(offset)
        if not 0.0 < self.offset < 0.5:
            raise ConfigError("query offset must lie in (0, 0.5)")

    def to_dict(self):
        return {"offset": self.offset}


class DecoderConfig:
    """Hidden widths of the point-wise MLP; the head always outputs 1."""

    def __init__(self, hidden=(256, 256)):
        self.hidden = tuple(int(h) for h in hidden)
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be positive")

    def to_dict(self):
        return {"hidden": list(self.hidden)}


def feature_width(encoder):
    """Decoder input width: 7 query positions times the summed channels."""
    return 7 * sum(encoder.channels)


def _encoder_shapes(cfg):
    cin = 1
    for k, cout in enumerate(cfg.channels, start=1):
        for j in range(1, cfg.convs_per_scale + 1):
            yield f"enc{k}c{j}w", (cout, cin, 3, 3, 3)
            yield f"enc{k}c{j}b", (cout,)
            cin = cout


def _decoder_shapes(width_in, cfg):
    widths = [width_in, *cfg.hidden, 1]
    for j, (a, b) in enumerate(zip(widths, widths[1:]), start=1):
        yield f"dec{j}w", (b, a)
        yield f"dec{j}b", (b,)


def _shape_table(kind, encoder, decoder):
    table = list(_encoder_shapes(encoder))
    if kind == "ifnet":
        width = feature_width(encoder)
    else:
        width = encoder.channels[-1] + 3
    table.extend(_decoder_shapes(width, decoder))
    return table


def _check_tensors(kind, encoder, decoder, tensors):
    want = dict(_shape_table(kind, encoder, decoder))
    have = {name: tuple(t.data.shape) for name, t in tensors.items()}
    if have != want:
        raise ConfigError("parameter table does not match the architecture")


class ModelParams:
    """Named weight tensors plus the architecture that shaped them."""

    kind = "ifnet"

    def __init__(self, encoder, query, decoder, tensors):
        self.encoder = encoder
        self.query = query
        self.decoder = decoder
        self.tensors = dict(tensors)
        _check_tensors(self.kind, encoder, decoder, self.tensors)

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    @property
    def decoder_width(self):
        return feature_width(self.encoder)


class BaselineParams:
    """Global-latent variant: one pooled code, decoder fed (z, p)."""

    kind = "baseline"

    def __init__(self, encoder, decoder, tensors):
        self.encoder = encoder
        self.decoder = decoder
        self.tensors = dict(tensors)
        _check_tensors(self.kind, encoder, decoder, self.tensors)

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    @property
    def decoder_width(self):
        return self.encoder.channels[-1] + 3


def _init_tensors(table, seed, dtype):
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in table:
        if name.endswith("b"):
            data = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            data = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape).astype(dtype)
        out[name] = Tensor(data)
    return out


def init_params(encoder=None, decoder=None, query=None, seed=0,
                dtype=np.float64):
    """Fresh IF-Net weights (He-normal weights, zero biases)."""
    encoder = encoder if encoder is not None else EncoderConfig()
    decoder = decoder if decoder is not None else DecoderConfig()
    if query is None:
        # default neighborhood distance: one input-voxel width
        query = QueryConfig(1.0 / encoder.resolution)
    tensors = _init_tensors(_shape_table("ifnet", encoder, decoder), seed, dtype)
    return ModelParams(encoder, query, decoder, tensors)


def init_baseline_params(encoder=None, decoder=None, seed=0, dtype=np.float64):
    encoder = encoder if encoder is not None else EncoderConfig()
    decoder = decoder if decoder is not None else DecoderConfig()
    tensors = _init_tensors(_shape_table("baseline", encoder, decoder), seed,
                            dtype)
    return BaselineParams(encoder, decoder, tensors)


# ---------------------------------------------------------------------------
# forward passes

def _as_input_tensor(x, resolution, dtype):
    if isinstance(x, VoxelGrid):
        x = x.data
    arr = np.asarray(x)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.shape != (1, resolution, resolution, resolution):
        raise ValueError(
            f"input grid shape {arr.shape} does not match the configured "
            f"resolution {resolution}")
    return Tensor(np.ascontiguousarray(arr, dtype=dtype))


def encode(params, x, tape=None):
    """Conv trunk.  Scale 1 convolves at full resolution; every later
    scale halves with a max pool, then convolves at its own resolution.
    Returns one feature grid tensor per scale, finest first."""
    cfg = params.encoder
    h = _as_input_tensor(x, cfg.resolution, params.dtype)
    grids = []
    for k in range(1, cfg.scales + 1):
        if k > 1:
            h = ad.downsample2(tape, h)
        for j in range(1, cfg.convs_per_scale + 1):
            h = ad.conv3d(tape, h, params.tensors[f"enc{k}c{j}w"],
                          params.tensors[f"enc{k}c{j}b"])
            h = ad.relu(tape, h)
        grids.append(h)
    return grids


def query_positions(points, query):
    """The 7 query positions per point (center then axis pairs), clamped
    into the closed domain so boundary points stay legal lookups."""
    pts = np.asarray(points, dtype=np.float64)
    pos = pts[..., None, :] + OFFSET_PATTERN * query.offset
    return np.clip(pos, -0.5, 0.5)


def extract_features(grids, points, query, tape=None):
    """Trilinear lookups at all query positions, concatenated scale-major
    (scale 1 center, +x, -x, +y, -y, +z, -z, then scale 2, ...)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[None]
    pos = query_positions(pts, query)
    blocks = []
    for grid in grids:
        for j in range(7):
            blocks.append(ad.trilinear_sample(tape, grid, pos[:, j]))
    return ad.concat(tape, blocks, axis=1)


def _decode_mlp(params, features, tape):
    if features.data.ndim != 2 or features.data.shape[1] != params.decoder_width:
        raise ValueError(
            f"decoder expects feature width {params.decoder_width}, "
            f"got {features.data.shape}")
    h = features
    layers = len(params.decoder.hidden) + 1
    for j in range(1, layers + 1):
        h = ad.linear(tape, h, params.tensors[f"dec{j}w"],
                      params.tensors[f"dec{j}b"])
        if j < layers:
            h = ad.relu(tape, h)
    logits = ad.reshape(tape, h, (h.data.shape[0],))
    probs = ad.sigmoid(tape, logits)
    return probs, logits


def decode(params, features, tape=None):
    """Point-wise MLP on feature rows -> (probabilities, logits)."""
    return _decode_mlp(params, features, tape)


def forward(params, x, points, tape=None):
    """Full pass: encode once, then decode every query point."""
    grids = encode(params, x, tape)
    feats = extract_features(grids, points, params.query, tape)
    return _decode_mlp(params, feats, tape)


def baseline_forward(params, x, points, tape=None):
    """Global-latent pass: pool the coarsest grid to one code z, then
    decode rows of (z, point coordinates)."""
    grids = encode(params, x, tape)
    z = ad.mean_spatial(tape, grids[-1])
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[None]
    rows = ad.broadcast_rows(tape, z, pts.shape[0])
    coords = Tensor(np.ascontiguousarray(pts, dtype=params.dtype))
    feats = ad.concat(tape, [rows, coords], axis=1)
    return _decode_mlp(params, feats, tape)


def receptive_radius(encoder, query=None):
    """Conservative radius, in input cells, of everything one decoded
    point can see.  Content and queries farther than this from the
    domain boundary are untouched by padding effects."""
    r, stride = 0.0, 1
    for k in range(encoder.scales):
        if k:
            r += stride / 2.0  # pooling window half-extent
            stride *= 2
        r += encoder.convs_per_scale * stride
    # one cell of trilinear slack at the coarsest scale plus the query offset
    r += stride
    if query is not None:
        r += query.offset * encoder.resolution
    return int(np.ceil(r))


# ---------------------------------------------------------------------------
# checkpoints

def save_params(path, params, extra=None, extra_tensors=None):
    """Write an IFCK checkpoint.

    Payload tensors are stored as little-endian float64 in header order;
    `extra` (JSON-able) and `extra_tensors` carry optimizer state.
    """
    header = {
        "kind": params.kind,
        "dtype": "f32" if params.dtype == np.float32 else "f64",
        "encoder": params.encoder.to_dict(),
        "decoder": params.decoder.to_dict(),
        "tensors": [[n, list(t.data.shape)] for n, t in params.tensors.items()],
        "extra": extra if extra is not None else {},
        "extra_tensors": [[n, list(np.asarray(a).shape)]
                          for n, a in (extra_tensors or {}).items()],
    }
    if params.kind == "ifnet":
        header["query"] = params.query.to_dict()
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for _, t in params.tensors.items():
            f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        for _, a in (extra_tensors or {}).items():
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_exact(f, count, path):
    data = f.read(count)
    if len(data) != count:
        raise CheckpointError(f"{path}: truncated checkpoint")
    return data


def load_params(path):
    """Read an IFCK checkpoint -> (params, extra, extra_tensors)."""
    with open(path, "rb") as f:
        if _read_exact(f, 4, path) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not an IFCK checkpoint")
        version, blob_len = struct.unpack("<IQ", _read_exact(f, 12, path))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: checkpoint version {version}, expected "
                f"{CHECKPOINT_VERSION}")
        header = json.loads(_read_exact(f, blob_len, path))
        dtype = np.float32 if header["dtype"] == "f32" else np.float64

        def read_table(entries):
            out = {}
            for name, shape in entries:
                count = int(np.prod(shape)) if shape else 1
                raw = _read_exact(f, 8 * count, path)
                out[name] = np.frombuffer(raw, dtype="<f8").reshape(shape)
            return out

        tensors = {n: Tensor(a.astype(dtype)) for n, a in
                   read_table(header["tensors"]).items()}
        extra_tensors = read_table(header.get("extra_tensors", []))

    encoder = EncoderConfig(**header["encoder"])
    decoder = DecoderConfig(**header["decoder"])
    if header["kind"] == "ifnet":
        query = QueryConfig(**header["query"])
        params = ModelParams(encoder, query, decoder, tensors)
    elif header["kind"] == "baseline":
        params = BaselineParams(encoder, decoder, tensors)
    else:
        raise CheckpointError(f"{path}: unknown model kind {header['kind']!r}")
    return params, header.get("extra", {}), extra_tensors
