"""Command-line entry point: ``taubno <subcommand> ...``.

Exit codes: 0 success, 2 usage error, 3 missing file, 4 hash mismatch,
1 anything else. Failures print one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import platform
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .connectome import load_connectome, save_connectome
from .dataset import (HashMismatch, dataset_connectome, generate_dataset, load_dataset,
                      load_seed_library, resolve_seed_library)
from .evaluation import emit_report, evaluate
from .kinetics import LambdaVector
from .model import CheckpointError, OrderingMismatch, checkpoint_graphs, load_checkpoint
from .solver import save_trajectory, simulate
from .synthetic import synthetic_connectome
from .training import TrainSettings, model_config_from, train

log = logging.getLogger("taubno")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_MISSING, EXIT_HASH = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail(EXIT_USAGE, "UsageError", f"{self.prog}: {message}")


def _fail(code, kind, message):
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    sys.exit(code)


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True, text=True,
                             timeout=10)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_provenance(out_dir, args, config: RunConfig, started, seeds: dict, extra=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prov = {
        "command": args.command,
        "argv": sys.argv[1:] if args.argv is None else args.argv,
        "config_hash": config.hash(),
        "config": config.to_dict(),
        "git_describe": git_describe(),
        "started": started,
        "finished": dt.datetime.now(dt.timezone.utc).isoformat(),
        "seeds": seeds,
        "versions": {"taubno": __version__, "python": platform.python_version(),
                     "numpy": np.__version__},
    }
    prov.update(extra or {})
    (out_dir / "provenance.json").write_text(json.dumps(prov, indent=1, sort_keys=True))


def _config(args, overrides: dict) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        try:
            val = json.loads(val)
        except json.JSONDecodeError:
            pass
        cfg.update({key: val})
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg


def _parse_lambda(text):
    try:
        return LambdaVector.parse(text)
    except ValueError as exc:
        raise UsageError(f"--lambda: {exc}") from None


# subcommands

def cmd_make_connectome(args, started):
    c = synthetic_connectome(args.regions, seed=args.seed)
    save_connectome(c, args.out)
    write_provenance(args.out, args, RunConfig(), started, {"connectome_seed": args.seed})
    print(json.dumps({"out": str(args.out), "n_regions": c.n_regions,
                      "ordering_hash": c.ordering_hash}))


def cmd_simulate(args, started):
    cfg = _config(args, {"sim.horizon": args.horizon, "sim.n_steps": args.steps})
    c = load_connectome(args.connectome)
    lv = _parse_lambda(args.lambda_)
    if args.seeds:
        library = load_seed_library(args.seeds, c.n_regions)
    else:
        library = resolve_seed_library(cfg, c)
    if args.seed_name:
        match = [s for s in library if s.name == args.seed_name]
        if not match:
            raise UsageError(f"no seed named {args.seed_name!r} in the library")
        seed = match[0]
    else:
        if not 0 <= args.seed_index < len(library):
            raise UsageError(f"--seed-index must lie in [0, {len(library)})")
        seed = library[args.seed_index]
    lengths = np.loadtxt(cfg["sim.lengths"], delimiter=",") if cfg["sim.lengths"] else None
    tol = cfg.tolerances()
    traj = simulate(c, lv, seed.regions, seed.intensities, seed.total_mass,
                    horizon=float(cfg["sim.horizon"]), n_steps=int(cfg["sim.n_steps"]),
                    base=cfg.kinetics(), lengths=lengths, tol=tol)
    out = Path(args.out)
    save_trajectory(traj, out, extra_meta={"seed": seed.to_dict(), "tolerances": tol.to_dict(),
                                           "ordering_hash": c.ordering_hash,
                                           "kinetics_base": cfg.section("kinetics")})
    if args.plot:
        from .plotting import trajectory_figure
        trajectory_figure(traj.times, traj.values, c.region_names, out.with_suffix(".png"),
                          title=f"seed: {seed.name}")
    write_provenance(out.parent, args, cfg, started, {})
    print(json.dumps({"out": str(out), "clamp_count": traj.clamp_count, **traj.info}))


def cmd_gen_dataset(args, started):
    cfg = _config(args, {"data.n_samples": args.n, "data.seed": args.seed,
                         "sim.horizon": args.horizon, "sim.n_steps": args.steps,
                         "jobs": args.jobs})
    c = load_connectome(args.connectome)
    manifest = generate_dataset(int(cfg["data.n_samples"]), c, cfg, int(cfg["data.seed"]),
                                args.out, jobs=cfg["jobs"])
    cfg.save(Path(args.out) / "config.json")
    write_provenance(args.out, args, cfg, started, {"master_seed": int(cfg["data.seed"])})
    counts = {s: sum(1 for r in manifest["samples"] if r["split"] == s)
              for s in ("train", "val", "test")}
    print(json.dumps({"out": str(args.out), "n_samples": len(manifest["samples"]), **counts}))


def _train_and_save(args, cfg, out_dir, ablations=()):
    c = load_connectome(args.connectome) if args.connectome else dataset_connectome(args.data)
    data = load_dataset(args.data, connectome=c)
    settings = TrainSettings.from_config(cfg)
    mcfg = model_config_from(cfg, c.n_regions, data.target.shape[2], c.ordering_hash, ablations)
    result = train(data.subset("train"), data.subset("val"), c, mcfg, settings, out_dir,
                   extra_meta={"times": data.times[1:].tolist(),
                               "dataset_config_hash": data.manifest["config_hash"],
                               "config_hash": cfg.hash()})
    if getattr(args, "plot", False):
        from .plotting import training_curve
        training_curve(result.log_rows, Path(out_dir) / "training_curve.png")
    return c, data, result


def cmd_train(args, started):
    cfg = _config(args, {"train.epochs": args.epochs, "train.seed": args.seed})
    c, data, result = _train_and_save(args, cfg, args.out)
    write_provenance(args.out, args, cfg, started, {"train_seed": int(cfg["train.seed"])})
    print(json.dumps({"out": str(args.out), "best_epoch": result.best_epoch,
                      "best_val_loss": result.best_val,
                      "n_parameters": result.model.n_parameters()}))


def _read_vector(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    text = path.read_text().replace("\n", ",")
    return np.array([float(x) for x in text.split(",") if x.strip()])


def cmd_predict(args, started):
    model, meta = load_checkpoint(args.ckpt)
    graphs = checkpoint_graphs(args.ckpt, model)
    u0 = _read_vector(args.u0)
    if u0.size != model.config.n_regions:
        raise UsageError(f"u0 has {u0.size} entries, model expects {model.config.n_regions}")
    lv = _parse_lambda(args.lambda_)
    pred = model.predict(u0[None], lv.as_array()[None], graphs)[0]
    times = meta.get("times", list(range(1, model.config.n_times + 1)))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(f"{t:.17g}" for t in times)]
    lines += [",".join(f"{v:.9g}" for v in row) for row in pred]
    out.write_text("\n".join(lines) + "\n")
    write_provenance(out.parent, args, RunConfig(), started, {},
                     {"ckpt_hash": meta.get("bin_sha256", "")})
    print(json.dumps({"out": str(out), "shape": list(pred.shape)}))


def _evaluate_into(ckpt, data_dir, split, out_dir, figures=True):
    model, meta = load_checkpoint(ckpt)
    c = load_connectome(Path(ckpt) / "connectome")
    if c.ordering_hash != model.config.ordering_hash:
        raise OrderingMismatch("checkpoint connectome ordering does not match the model")
    data = load_dataset(data_dir, connectome=c).subset(split)
    report, pred = evaluate(model, data, c, split=split, config_hash=meta.get("config_hash", ""),
                            ckpt_hash=meta.get("bin_sha256", ""))
    emit_report(report, out_dir, c, pred, data.target, figures=figures)
    return report


def cmd_evaluate(args, started):
    report = _evaluate_into(args.ckpt, args.data, args.split, args.out, figures=not args.no_plots)
    write_provenance(args.out, args, RunConfig(), started, {})
    print(json.dumps({"out": str(args.out), "rmse": report.rmse, "mae": report.mae,
                      "rel_l2": report.rel_l2, "pooled_r2": report.pooled_r2}))


def cmd_ablate(args, started):
    cfg = _config(args, {"train.epochs": args.epochs, "train.seed": args.seed})
    out = Path(args.out)
    variants = [v for v in args.variant.split("+") if v and v != "full"]
    _train_and_save(args, cfg, out / "ckpt", ablations=variants)
    report = _evaluate_into(out / "ckpt", args.data, "test", out / "report",
                            figures=not args.no_plots)
    write_provenance(out, args, cfg, started, {"train_seed": int(cfg["train.seed"])},
                     {"variant": args.variant})
    print(json.dumps({"out": str(out), "variant": args.variant, "rmse": report.rmse,
                      "rel_l2": report.rel_l2, "pooled_r2": report.pooled_r2}))


def build_parser():
    p = _Parser(prog="taubno", description="NTM tau simulation and Tau-BNO surrogate")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="JSON config (flat dotted keys)")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                            help="override one config key (repeatable)")

    s = sub.add_parser("make-connectome", help="write a synthetic directed connectome")
    s.add_argument("--regions", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_make_connectome)

    s = sub.add_parser("simulate", help="run one quasi-static NTM simulation")
    common(s)
    s.add_argument("--connectome", required=True)
    s.add_argument("--lambda", dest="lambda_", required=True, help="f,gamma,delta,epsilon,mu")
    s.add_argument("--seeds", help="seed library JSON (default: bundled library)")
    s.add_argument("--seed-name")
    s.add_argument("--seed-index", type=int, default=0)
    s.add_argument("--horizon", type=float)
    s.add_argument("--steps", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--plot", action="store_true", help="also write <out>.png")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("gen-dataset", help="simulate a training dataset")
    common(s)
    s.add_argument("--connectome", required=True)
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--horizon", type=float)
    s.add_argument("--steps", type=int)
    s.add_argument("--jobs", type=int, help="worker processes (default TAUBNO_JOBS or all cores)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_dataset)

    s = sub.add_parser("train", help="train Tau-BNO on a dataset")
    common(s)
    s.add_argument("--data", required=True)
    s.add_argument("--connectome", help="defaults to the dataset's copy")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--plot", action="store_true", help="also write training_curve.png")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="predict a trajectory from a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--u0", required=True, help="CSV with one initial value per region")
    s.add_argument("--lambda", dest="lambda_", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="score a checkpoint on a dataset split")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test", choices=("train", "val", "test"))
    s.add_argument("--no-plots", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ablate", help="train and evaluate an ablated variant")
    common(s)
    s.add_argument("--variant", required=True,
                   help="no_fo, no_qo, no_dgo, no_fourier, no_diff (join with +), or full")
    s.add_argument("--data", required=True)
    s.add_argument("--connectome")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--no-plots", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    if args.command is None:
        parser.print_usage(sys.stderr)
        _fail(EXIT_USAGE, "UsageError", "no subcommand given")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = dt.datetime.now(dt.timezone.utc).isoformat()
    try:
        args.func(args, started)
    except (UsageError, ConfigError) as exc:
        _fail(EXIT_USAGE, type(exc).__name__, str(exc))
    except FileNotFoundError as exc:
        _fail(EXIT_MISSING, "FileNotFoundError", str(exc))
    except (HashMismatch, OrderingMismatch, CheckpointError) as exc:
        _fail(EXIT_HASH, type(exc).__name__, str(exc))
    except Exception as exc:  # noqa: BLE001 - reported as machine-readable JSON
        log.debug("failure", exc_info=True)
        _fail(EXIT_ERROR, type(exc).__name__, str(exc))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
