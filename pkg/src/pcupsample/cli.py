"""Command line entry point: ``pcupsample {upsample,upsample-oracle,train,eval,synth,ablate}``.

Every command echoes its effective configuration (``# key=value`` lines on
stdout) and stamps its outputs with a hash of that configuration.  Exit
codes: 0 success, 2 usage, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .cloud import read_cloud, read_mesh, write_cloud, write_mesh
from .errors import UpsampleError, ValidationError
from .metrics import add_noise, evaluate
from .p2pnet import load_params, save_params
from .pipeline import upsample, upsample_oracle
from .refine import STRATEGIES, RefineConfig
from .sampling import InterpolationConfig, PatchConfig
from .synth import SHAPES, patch_pair, sample_shape, shape_mesh
from .training import AUGMENTATIONS, TrainConfig, load_dataset, train

log = logging.getLogger("pcupsample")

# Defaults shared by the config file and the flags.  None means "not set".
DEFAULTS = {
    "rate": 4.0,
    "k": 16,
    "step": 0.02,
    "iters": 10,
    "strategy": "grad-descent",
    "seed": 0,
    "checkpoint": None,
    "patch_size": 256,
    "overlap": 3.0,
    "noise_tau": 0.0,
    "squared": False,
    "mean_of_directions": False,
    "one_sided": False,
    "drop_original": False,
    "refresh_features": True,
    "synthetic": None,
    "patches": 1,
    "epochs": 60,
    "batch_size": 32,
    "lr": 1e-3,
    "lr_decay": 0.5,
    "decay_every": 20,
    "jitter": 0.02,
    "d": 32,
    "augment": "",
    "head": "distance",
    "regressor_input": "both",
}

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _coerce(key, raw):
    default = DEFAULTS.get(key)
    if isinstance(default, bool):
        low = str(raw).strip().lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ValidationError(f"config key {key!r} expects a boolean, got {raw!r}", "cli")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def read_config_file(path):
    """Parse a flat ``key=value`` file (``#`` comments, dashes or underscores in keys)."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key=value", "cli")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise ValidationError(f"{path}:{lineno}: unknown key {key!r}", "cli")
        values[key] = _coerce(key, raw)
    return values


def effective_config(args, keys):
    cfg = {k: DEFAULTS[k] for k in keys}
    if getattr(args, "config", None):
        cfg.update({k: v for k, v in read_config_file(args.config).items() if k in cfg})
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def config_hash(cfg):
    text = "\n".join(f"{k}={cfg[k]}" for k in sorted(cfg))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def echo(cfg, command):
    print(f"# command={command}")
    for k in sorted(cfg):
        print(f"# {k}={cfg[k]}")
    print(f"# config_hash={config_hash(cfg)}")


def _write_meta(path, command, cfg, **extra):
    meta = {"command": command, "config": cfg, "config_hash": config_hash(cfg), **extra}
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _write_output(cloud, path, cfg):
    path = Path(path)
    comments = [f"config_hash {config_hash(cfg)}"] if path.suffix.lower() == ".ply" else ()
    write_cloud(cloud, path, comments=comments)


def _interp(cfg):
    return InterpolationConfig(rate=cfg["rate"], k_neighbors=cfg["k"], fps_seed=0,
                               drop_original=cfg["drop_original"])


def _refine_cfg(cfg):
    return RefineConfig(strategy=cfg["strategy"], step=cfg["step"], iterations=cfg["iters"],
                        refresh_features=cfg["refresh_features"])


def _noisy_input(path, cfg):
    cloud = read_cloud(path)
    if cfg["noise_tau"] > 0:
        cloud = add_noise(cloud, cfg["noise_tau"], np.random.default_rng(cfg["seed"]))
    return cloud


PIPE_KEYS = ["rate", "k", "step", "iters", "strategy", "seed", "checkpoint", "patch_size", "overlap",
             "noise_tau", "drop_original", "refresh_features"]


def cmd_upsample(args):
    cfg = effective_config(args, PIPE_KEYS)
    echo(cfg, "upsample")
    if cfg["checkpoint"] is None:
        raise ValidationError("upsample needs --checkpoint", "cli")
    if cfg["rate"] < 1:
        raise ValidationError("--rate must be >= 1", "cli")
    net = load_params(cfg["checkpoint"])
    strategy = cfg["strategy"]
    if net.out_channels == 3 and strategy != "auto-offset":
        raise ValidationError("checkpoint has an offset head; use --strategy auto-offset", "cli")
    if net.out_channels == 1 and strategy == "auto-offset":
        raise ValidationError("auto-offset needs a checkpoint trained with --head offset", "cli")
    result = upsample(_noisy_input(args.input, cfg), net, _interp(cfg), _refine_cfg(cfg),
                      PatchConfig(cfg["patch_size"], cfg["overlap"]))
    _write_output(result.output, args.output, cfg)
    _write_meta(args.output, "upsample", cfg, n_points=len(result.output), k_used=result.k_used)
    print(f"wrote {len(result.output)} points to {args.output}")
    return 0


def cmd_upsample_oracle(args):
    cfg = effective_config(args, PIPE_KEYS)
    echo(cfg, "upsample-oracle")
    if cfg["strategy"] == "auto-offset":
        raise ValidationError("the oracle provides distances, not offsets; pick another strategy", "cli")
    gt = read_cloud(args.gt)
    result = upsample_oracle(_noisy_input(args.input, cfg), gt, _interp(cfg), _refine_cfg(cfg))
    _write_output(result.output, args.output, cfg)
    if args.trace and result.traces:
        Path(args.trace).write_text(result.traces[0].to_csv())
    _write_meta(args.output, "upsample-oracle", cfg, n_points=len(result.output), k_used=result.k_used,
                warnings=result.traces[0].warnings if result.traces else [])
    print(f"wrote {len(result.output)} points to {args.output}")
    return 0


TRAIN_KEYS = ["synthetic", "patches", "epochs", "batch_size", "lr", "lr_decay", "decay_every", "jitter",
              "k", "d", "rate", "seed", "augment", "head", "regressor_input", "checkpoint"]


def synthetic_dataset(shape, count, seed):
    rng = np.random.default_rng(seed)
    return [patch_pair(shape, rng)[:2] for _ in range(count)]


def cmd_train(args):
    cfg = effective_config(args, TRAIN_KEYS)
    echo(cfg, "train")
    if cfg["checkpoint"] is None:
        raise ValidationError("train needs --checkpoint (output path)", "cli")
    if cfg["synthetic"]:
        dataset = synthetic_dataset(cfg["synthetic"], cfg["patches"], cfg["seed"])
    elif args.data:
        dataset = load_dataset(args.data)
    else:
        raise ValidationError("train needs --data DIR or --synthetic SHAPE", "cli")
    augment = tuple(a for a in cfg["augment"].split(",") if a)
    tcfg = TrainConfig(jitter_sigma=cfg["jitter"], batch_size=cfg["batch_size"], epochs=cfg["epochs"],
                       lr=cfg["lr"], lr_decay=cfg["lr_decay"], decay_every=cfg["decay_every"], k=cfg["k"],
                       d=cfg["d"], rate=cfg["rate"], interp_k=cfg["k"], rng_seed=cfg["seed"],
                       augment=augment, head=cfg["head"], regressor_input=cfg["regressor_input"])
    net, history = train(dataset, tcfg)
    save_params(net, cfg["checkpoint"])
    log_path = args.log or str(cfg["checkpoint"]) + ".log.csv"
    Path(log_path).write_text(history.to_csv())
    _write_meta(cfg["checkpoint"], "train", cfg, final_loss=history.losses[-1])
    print(f"initial loss {history.losses[0]:.6g}, final loss {history.losses[-1]:.6g}")
    return 0


EVAL_KEYS = ["squared", "mean_of_directions", "one_sided", "noise_tau", "seed", "checkpoint", "rate", "k",
             "step", "iters", "strategy", "patch_size", "overlap", "drop_original", "refresh_features"]


def cmd_eval(args):
    cfg = effective_config(args, EVAL_KEYS)
    echo(cfg, "eval")
    gt = read_cloud(args.gt)
    if args.input:
        # pipe mode: run the upsampler on (optionally noisy) low-res input first
        if cfg["checkpoint"] is None:
            raise ValidationError("eval --input needs --checkpoint", "cli")
        net = load_params(cfg["checkpoint"])
        pred = upsample(_noisy_input(args.input, cfg), net, _interp(cfg), _refine_cfg(cfg),
                        PatchConfig(cfg["patch_size"], cfg["overlap"])).output
    elif args.pred:
        pred = read_cloud(args.pred)
    else:
        raise ValidationError("eval needs --pred FILE or --input FILE", "cli")
    mesh = read_mesh(args.mesh) if args.mesh else None
    report = evaluate(pred, gt, mesh, squared=cfg["squared"], mean_of_directions=cfg["mean_of_directions"],
                      one_sided=cfg["one_sided"]).to_json()
    report["config_hash"] = config_hash(cfg)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_synth(args):
    cfg = {"shape": args.shape, "n": args.n, "seed": args.seed if args.seed is not None else 0}
    echo(cfg, "synth")
    if cfg["n"] < 1:
        raise ValidationError("--n must be >= 1", "cli")
    pts = sample_shape(cfg["shape"], cfg["n"], np.random.default_rng(cfg["seed"]))
    write_cloud(pts, args.output)
    mesh = shape_mesh(cfg["shape"])
    if mesh is not None:
        mesh_path = args.mesh or str(Path(args.output).with_suffix(".off"))
        write_mesh(mesh, mesh_path)
        print(f"wrote mesh to {mesh_path}")
    print(f"wrote {cfg['n']} points to {args.output}")
    return 0


def cmd_ablate(args):
    from .ablation import STUDIES, AblationFixture, run_study

    if args.study not in STUDIES:
        print(f"unknown study {args.study!r}; valid studies: {', '.join(STUDIES)}", file=sys.stderr)
        return 2
    fixture = AblationFixture(shape=args.shape, seed=args.seed if args.seed is not None else 0,
                              train_patches=args.train_patches, test_patches=args.test_patches,
                              epochs=args.epochs if args.epochs is not None else AblationFixture.epochs)
    cfg = {"study": args.study, **fixture.describe()}
    echo(cfg, "ablate")
    table = run_study(args.study, fixture)
    text = f"# config_hash={config_hash(cfg)}\n" + table.to_csv()
    if args.output:
        Path(args.output).write_text(text)
    print(text, end="")
    return 0


def _add_pipe_flags(p, oracle=False):
    p.add_argument("--config", help="flat key=value file; flags override it")
    p.add_argument("--rate", type=float)
    p.add_argument("--k", type=int, help="neighbors used for midpoint generation")
    p.add_argument("--step", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-tau", dest="noise_tau", type=float)
    p.add_argument("--drop-original", dest="drop_original", action="store_const", const=True)
    p.add_argument("--no-refresh", dest="refresh_features", action="store_const", const=False)
    if not oracle:
        p.add_argument("--checkpoint")
        p.add_argument("--patch-size", dest="patch_size", type=int)
        p.add_argument("--overlap", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="pcupsample", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("upsample", help="upsample a cloud with a trained network")
    p.add_argument("input")
    p.add_argument("output")
    _add_pipe_flags(p)
    p.set_defaults(func=cmd_upsample)

    p = sub.add_parser("upsample-oracle", help="upsample refining against a known ground truth")
    p.add_argument("input")
    p.add_argument("gt")
    p.add_argument("output")
    p.add_argument("--trace", help="write the refinement trace CSV here")
    _add_pipe_flags(p, oracle=True)
    p.set_defaults(func=cmd_upsample_oracle)

    p = sub.add_parser("train", help="train the distance network")
    p.add_argument("--config")
    p.add_argument("--data", help="directory with low/*.xyz and high/*.xyz")
    p.add_argument("--synthetic", choices=SHAPES)
    p.add_argument("--patches", type=int, help="number of synthetic patch pairs")
    p.add_argument("--checkpoint")
    p.add_argument("--log")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-decay", dest="lr_decay", type=float)
    p.add_argument("--decay-every", dest="decay_every", type=int)
    p.add_argument("--jitter", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--augment", help=f"comma separated subset of {','.join(AUGMENTATIONS)}")
    p.add_argument("--head", choices=("distance", "offset"))
    p.add_argument("--regressor-input", dest="regressor_input", choices=("both", "local", "global"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compute CD/HD/P2F")
    p.add_argument("--pred")
    p.add_argument("--input", help="low-res input; runs the upsampler first (needs --checkpoint)")
    p.add_argument("--gt", required=True)
    p.add_argument("--mesh")
    p.add_argument("--out")
    p.add_argument("--squared", action="store_const", const=True)
    p.add_argument("--mean-of-directions", dest="mean_of_directions", action="store_const", const=True)
    p.add_argument("--one-sided", dest="one_sided", action="store_const", const=True)
    _add_pipe_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="sample an analytic surface")
    p.add_argument("shape", choices=SHAPES)
    p.add_argument("output")
    p.add_argument("--n", type=int, default=2048)
    p.add_argument("--seed", type=int)
    p.add_argument("--mesh", help="mesh output path (default: output with .off suffix)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ablate", help="run an ablation study on a synthetic fixture")
    p.add_argument("study")
    p.add_argument("--output")
    p.add_argument("--shape", default="torus", choices=SHAPES[:3])
    p.add_argument("--seed", type=int)
    p.add_argument("--train-patches", dest="train_patches", type=int, default=8)
    p.add_argument("--test-patches", dest="test_patches", type=int, default=4)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except UpsampleError as exc:
        print(f"error: {exc.qualified()}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
