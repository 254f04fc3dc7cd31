"""Command-line pipeline: gen, train, reconstruct, eval, verify.

Exit codes are a contract: 0 success, 1 usage or config error, 2
numerical abort (non-finite values), 3 empty-output warning. In
deterministic mode every command is a pure function of (config, inputs,
seed); re-runs produce byte-identical artifacts except wall-clock
columns.
"""

import argparse
import os
import sys

import numpy as np

from . import geometry as geo
from .autodiff import NonFiniteError
from .mesher import evaluate_field, reconstruct, save_field
from .model import CheckpointError, ConfigError, init_params, load_params
from .runconfig import load_config, save_config
from .sampler import (DatasetError, SamplerConfig, ShapeRecord, read_dataset,
                      sample_training_points, write_dataset)
from .trainer import TrainState, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_EMPTY = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 means numerical abort here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _draw_shape(kind, rng, seed):
    """One randomized instance of a shape family, deterministic in rng."""
    if kind == "sphere":
        params = {"radius": float(rng.uniform(0.25, 0.45)), "subdiv": 4}
    elif kind == "box":
        params = {"extents": tuple(rng.uniform(0.3, 1.0, size=3))}
    elif kind == "union2":
        # normalization rescales afterwards, so only the ratios matter;
        # keep offset/2 + radius clear of the 0.5 meshing boundary
        r1 = float(rng.uniform(0.14, 0.20))
        r2 = float(rng.uniform(0.18, 0.26))
        params = {"radius1": r1, "radius2": r2,
                  "offset": float(rng.uniform(0.5, 0.8) * (r1 + r2))}
    elif kind == "capsule_figure":
        params = {}
        seed = int(rng.integers(2 ** 31))  # drives the limb angles
    else:
        raise ConfigError(f"unknown shape kind '{kind}'")
    return geo.gen_synthetic(kind, params, seed=seed)


def _split_ids(n, val_frac, test_frac, rng):
    """Seeded shuffle; floor rule for val/test, remainder trains."""
    perm = rng.permutation(n)
    n_test = int(np.floor(test_frac * n))
    n_val = int(np.floor(val_frac * n))
    test = sorted(perm[:n_test].tolist())
    val = sorted(perm[n_test:n_test + n_val].tolist())
    tr = sorted(perm[n_test + n_val:].tolist())
    return tr, val, test


def cmd_gen(cfg):
    out = cfg.out_dir
    os.makedirs(os.path.join(out, "shapes"), exist_ok=True)
    os.makedirs(os.path.join(out, "inputs"), exist_ok=True)
    kinds = cfg.kinds()
    n = cfg.shape_count
    res = cfg.input_resolution
    rng = np.random.default_rng(cfg.seed)

    records, manifest = [], []
    for i in range(n):
        kind = kinds[i % len(kinds)]
        shape_id = f"{i:03d}_{kind}"
        mesh = _draw_shape(kind, rng, seed=cfg.seed + i)
        mesh_path = os.path.join("shapes", shape_id + ".off")
        geo.save_mesh(os.path.join(out, mesh_path), mesh)

        cloud = None
        if cfg.task in ("pointcloud_sparse", "pointcloud_dense"):
            cloud, _, _ = geo.sample_surface(mesh, cfg.cloud_points,
                                             seed=int(rng.integers(2 ** 31)))
            input_path = os.path.join("inputs", shape_id + ".xyz")
            geo.save_xyz(os.path.join(out, input_path), geo.PointCloud(cloud))
            grid = geo.voxelize_points(cloud, res)
        elif cfg.task == "single_view":
            direction = rng.standard_normal(3)
            direction /= np.linalg.norm(direction)
            pc = geo.depth_cull(mesh, direction, cfg.depth_resolution)
            cloud = pc.points
            input_path = os.path.join("inputs", shape_id + ".xyz")
            geo.save_xyz(os.path.join(out, input_path), pc)
            grid = geo.voxelize_points(cloud, res)
        else:
            grid = geo.voxelize_mesh(mesh, res)
            input_path = os.path.join("inputs", shape_id + ".ifvx")
            geo.save_voxels(os.path.join(out, input_path), grid)

        scfg = SamplerConfig(count=cfg.sample_count, sigma1=cfg.sigma1,
                             sigma2=cfg.sigma2, ratio=cfg.sample_ratio,
                             seed=cfg.seed + 1000 + i)
        points, labels = sample_training_points(mesh, scfg)
        records.append(ShapeRecord(shape_id, grid.data, points, labels,
                                   cloud=cloud, mesh_ref=mesh_path))
        manifest.append((shape_id, kind, mesh_path, input_path))

    tr, val, test = _split_ids(n, cfg.val_frac, cfg.test_frac, rng)
    split_of = {}
    for name, ids in (("train", tr), ("val", val), ("test", test)):
        split_of.update({i: name for i in ids})
        write_dataset(os.path.join(out, name + ".ifds"),
                      [records[i] for i in ids])

    with open(os.path.join(out, "manifest.txt"), "w") as f:
        f.write("# id split kind mesh input\n")
        for i, (shape_id, kind, mesh_path, input_path) in enumerate(manifest):
            f.write(f"{shape_id} {split_of[i]} {kind} "
                    f"{mesh_path} {input_path}\n")
    save_config(os.path.join(out, "config_used.cfg"), cfg, all_keys=True)

    print(f"generated {n} shapes ({len(tr)} train / {len(val)} val / "
          f"{len(test)} test) under {out}")
    return EXIT_OK


def cmd_train(cfg, resume=False):
    out = cfg.out_dir
    train_recs = read_dataset(os.path.join(out, "train.ifds"))
    val_path = os.path.join(out, "val.ifds")
    val_recs = read_dataset(val_path) if os.path.exists(val_path) else []
    if not val_recs:
        print("note: empty val split, validating on the training shapes")
        val_recs = train_recs

    state = None
    params = None
    resume_path = os.path.join(out, "train_state.ifck")
    if resume:
        if not os.path.exists(resume_path):
            raise ConfigError(f"--resume: no train state at {resume_path}")
        state = TrainState.load(resume_path)
    else:
        dtype = np.float64 if cfg.precision == "f64" else np.float32
        params = init_params(encoder=cfg.encoder_config(),
                             decoder=cfg.decoder_config(),
                             query=cfg.query_config(),
                             seed=cfg.seed, dtype=dtype)

    state = train(train_recs, val_recs, params, cfg.trainer_config(),
                  log_path=os.path.join(out, "loss.csv"),
                  ckpt_path=os.path.join(out, "model.ifck"),
                  resume_path=resume_path, state=state)
    best = "n/a" if state.best_val is None else f"{state.best_val:.6f}"
    print(f"trained to step {state.step}, best val loss {best}; "
          f"checkpoint at {os.path.join(out, 'model.ifck')}")
    return EXIT_OK


def _load_input(path, resolution):
    if path.endswith(".ifvx"):
        grid = geo.load_voxels(path)
        if grid.n != resolution:
            raise ConfigError(
                f"{path}: {grid.n}^3 input but the model expects "
                f"{resolution}^3")
        return grid
    if path.endswith(".xyz"):
        return geo.voxelize_points(geo.load_xyz(path).points, resolution)
    raise ConfigError(f"{path}: expected a .ifvx voxel grid or .xyz cloud")


def cmd_reconstruct(cfg, checkpoint, input_path, output_path, field_path=None):
    params, extra, _ = load_params(checkpoint)
    x = _load_input(input_path, params.encoder.resolution)
    mcfg = cfg.mesher_config()
    if field_path:
        save_field(field_path, evaluate_field(params, x, mcfg))
    mesh = reconstruct(params, x, mcfg)
    if len(mesh.faces) == 0:
        geo.save_mesh(output_path, mesh)
        print(f"warning: no surface crossed threshold {mcfg.threshold}; "
              f"wrote an empty mesh to {output_path}", file=sys.stderr)
        return EXIT_EMPTY
    normals = geo.vertex_normals(mesh) if output_path.endswith(".obj") else None
    geo.save_mesh(output_path, mesh, normals=normals)
    print(f"reconstructed {len(mesh.vertices)} vertices / "
          f"{len(mesh.faces)} faces -> {output_path}")
    return EXIT_OK


def cmd_eval(cfg, pred_dir, gt_dir, out_csv=None):
    from .metrics import evaluate
    gt_files = sorted(p for p in os.listdir(gt_dir)
                      if p.endswith((".off", ".obj")))
    if not gt_files:
        raise ConfigError(f"{gt_dir}: no .off or .obj meshes to evaluate")
    rows, means, failed = [], [], 0
    for name in gt_files:
        shape_id = os.path.splitext(name)[0]
        pred_path = os.path.join(pred_dir, shape_id + ".obj")
        if not os.path.exists(pred_path):
            rows.append(f"{shape_id},FAILED,,,,")
            failed += 1
            continue
        try:
            rep = evaluate(geo.load_mesh(pred_path),
                           geo.load_mesh(os.path.join(gt_dir, name)),
                           n_points=cfg.metric_points, seed=cfg.seed)
        except (ValueError, geo.NonWatertightError) as e:
            print(f"{shape_id}: {e}", file=sys.stderr)
            rows.append(f"{shape_id},FAILED,,,,")
            failed += 1
            continue
        rows.append(f"{shape_id},{rep.csv_row()}")
        means.append([rep.iou, rep.chamfer_l2, rep.normal_consistency])

    lines = ["id," + "iou,chamfer_l2,normal_consistency,n_points,seed"]
    lines.extend(rows)
    if means:
        m = np.mean(np.array(means, dtype=np.float64), axis=0)
        lines.append(f"mean,{m[0]:.17g},{m[1]:.17g},{m[2]:.17g},"
                     f"{cfg.metric_points},{cfg.seed}")
    text = "".join(ln + "\n" for ln in lines)
    if out_csv is None:
        out_csv = os.path.join(cfg.out_dir, "metrics.csv")
    os.makedirs(os.path.dirname(out_csv) or ".", exist_ok=True)
    with open(out_csv, "w") as f:
        f.write(text)
    print(text, end="")
    if failed:
        print(f"{failed} shape(s) missing or unusable", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def cmd_verify():
    from .verify import run_battery
    results = run_battery(verbose=True)
    return EXIT_OK if all(r.passed for r in results) else EXIT_USAGE


def _common_flags(defaulted):
    """Shared global flags; the subcommand copies must not re-apply their
    defaults over values already parsed at the top level."""
    p = _Parser(add_help=False)
    sup = argparse.SUPPRESS

    def dfl(v):
        return v if defaulted else sup

    p.add_argument("--config", metavar="PATH", default=dfl(None),
                   help="run configuration file (key = value lines)")
    p.add_argument("--seed", type=int, metavar="N", default=dfl(None),
                   help="override the config seed")
    p.add_argument("--threads", type=int, metavar="N", default=dfl(None),
                   help="worker threads for compiled kernels")
    p.add_argument("--deterministic", action="store_true",
                   default=dfl(False),
                   help="single-threaded, bit-reproducible runs")
    return p


def build_parser():
    root_common = _common_flags(defaulted=True)
    sub_common = _common_flags(defaulted=False)

    ap = _Parser(prog="ifnet", parents=[root_common],
                 description="implicit feature networks for 3D shape "
                             "reconstruction and completion")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sub.add_parser("gen", parents=[sub_common],
                   help="generate synthetic shapes, inputs and splits")
    t = sub.add_parser("train", parents=[sub_common],
                       help="fit the model on the generated training split")
    t.add_argument("--resume", action="store_true",
                   help="continue from the saved train state")
    r = sub.add_parser("reconstruct", parents=[sub_common],
                       help="mesh one input through a trained checkpoint")
    r.add_argument("checkpoint", help="model checkpoint (.ifck)")
    r.add_argument("input", help="input grid (.ifvx) or point cloud (.xyz)")
    r.add_argument("output", help="output mesh path (.obj)")
    r.add_argument("--field", metavar="PATH",
                   help="also dump the sampled occupancy field (.iffd)")
    e = sub.add_parser("eval", parents=[sub_common],
                       help="score predicted meshes against ground truth")
    e.add_argument("pred_dir", help="directory of predicted .obj meshes")
    e.add_argument("gt_dir", help="directory of ground-truth meshes")
    e.add_argument("--out", metavar="CSV", help="metrics CSV path")
    sub.add_parser("verify", parents=[sub_common],
                   help="run the numerical property battery")
    return ap


def _resolve_config(args):
    if args.config is None:
        raise ConfigError(f"'{args.command}' needs --config")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def _apply_threading(args):
    if args.deterministic and args.threads not in (None, 1):
        raise ConfigError("--deterministic forces --threads 1")
    n = 1 if args.deterministic else args.threads
    if n is not None:
        if n < 1:
            raise ConfigError("--threads must be >= 1")
        import numba
        numba.set_num_threads(n)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _apply_threading(args)
        if args.command == "verify":
            return cmd_verify()
        cfg = _resolve_config(args)
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "train":
            return cmd_train(cfg, resume=args.resume)
        if args.command == "reconstruct":
            return cmd_reconstruct(cfg, args.checkpoint, args.input,
                                   args.output, field_path=args.field)
        if args.command == "eval":
            return cmd_eval(cfg, args.pred_dir, args.gt_dir,
                            out_csv=args.out)
        raise ConfigError(f"unknown command {args.command}")
    except NonFiniteError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CheckpointError, DatasetError,
            geo.MeshFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
