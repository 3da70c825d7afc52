"""Command-line interface: ``fdia-cgcn {convert,gen,train,eval,bench}``.

Exit codes: 0 success, 1 runtime failure, 2 input or parse error.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import os
import sys
import time
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .case_io import CaseParseError, GridSchemaError, builtin_case, load_case, write_grid_json
from .dataset import (ConfigError, DatasetFormatError, GenConfig, Scaler, ScenarioError, dataset_grid,
                      file_digest, generate_dataset, load_dataset, save_dataset)
from .evalbench import benchmark_inference, evaluate, report
from .grid import GridValidationError, build_weighted_adjacency
from .nn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .nn.model import ArchitectureError, CgcnArch, FcnArch, build_fcn_baseline, init_model
from .nn.train import TrainConfig, TrainingDiverged, train
from .spectral import scaled_laplacian_from_graph

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2
INPUT_ERRORS = (CaseParseError, GridSchemaError, GridValidationError, ConfigError, DatasetFormatError,
                CheckpointError, ArchitectureError, FileNotFoundError, IsADirectoryError)


class InputError(Exception):
    pass


def _default_seed() -> int:
    raw = os.environ.get("FDIA_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"FDIA_SEED must be an integer, got {raw!r}") from None


def _sha256(path) -> str:
    return file_digest(path)


def write_manifest(path, command: str, config: dict, seeds: dict, inputs: dict) -> None:
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": config,
        "seeds": seeds,
        "inputs": inputs,
        "tool_version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    Path(path).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _load_grid(source: str):
    p = Path(source)
    if not p.exists() and not p.suffix:
        try:
            return builtin_case(source), {"builtin": source}
        except FileNotFoundError:
            raise InputError(f"no such case file or bundled case: {source}") from None
    return load_case(p), {str(p): _sha256(p)}


def _parse_splits(text: str) -> tuple[Fraction, ...]:
    try:
        parts = tuple(Fraction(s.strip()) for s in text.split(","))
    except (ValueError, ZeroDivisionError):
        raise InputError(f"bad --splits value {text!r}") from None
    if len(parts) != 3:
        raise InputError("--splits needs three comma-separated fractions")
    return parts


# ------------------------------------------------------------------ commands

def cmd_convert(args) -> int:
    grid = load_case(args.input)
    text = write_grid_json(grid)
    Path(args.output).write_text(text, encoding="utf-8")
    print(f"wrote {args.output}: {grid.n} buses, {len(grid.branches)} branches, {len(grid.gens)} gens")
    return EXIT_OK


def cmd_gen(args) -> int:
    grid, inputs = _load_grid(args.grid)
    seed = args.seed if args.seed is not None else _default_seed()
    cfg = GenConfig(
        total=args.total, splits=_parse_splits(args.splits), load_bounds=(args.load_lo, args.load_hi),
        noise=args.noise, scale_bounds=(args.scale_lo, args.scale_hi), bus_fraction=args.attack_frac,
        seed=seed,
    )
    t0 = time.perf_counter()
    try:
        ds = generate_dataset(grid, cfg, jobs=args.jobs)
    except ScenarioError as exc:
        print(f"error: generation aborted, scenario {exc.index} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out = Path(args.out)
    save_dataset(ds, out)
    write_manifest(out / "manifest.json", "gen", {**cfg.to_dict(), "jobs": args.jobs},
                   {"master_seed": seed}, {**inputs, "grid_fingerprint": ds.grid_fingerprint})
    counts = {k: s.composition() for k, s in ds.splits.items()}
    print(json.dumps({"out": str(out), "seconds": round(time.perf_counter() - t0, 2), "counts": counts}))
    return EXIT_OK


def build_model(args, n: int, grid=None):
    if args.arch == "cgcn":
        width = args.channels if args.channels is not None else 32
        arch = CgcnArch.default(n, args.layers, width, args.order)
        ltilde = scaled_laplacian_from_graph(build_weighted_adjacency(grid), args.lambda_max)
        return init_model(arch, ltilde, seed=args.seed, precision=args.precision), arch.to_dict()
    width = args.channels if args.channels is not None else 64
    arch = FcnArch.default(n, args.layers, width)
    return build_fcn_baseline(arch, seed=args.seed, precision=args.precision), arch.to_dict()


def cmd_train(args) -> int:
    if args.seed is None:
        args.seed = _default_seed()
    ds = load_dataset(args.data)
    grid = dataset_grid(ds) if args.arch == "cgcn" else None
    model, arch = build_model(args, ds.n, grid)
    patience = None if args.patience < 0 else args.patience
    cfg = TrainConfig(batch_size=args.batch, max_epochs=args.max_epochs, patience=patience,
                      lr=args.lr, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log = (lambda e, tr, va: print(f"epoch {e:4d}  train {tr:.5f}  val {va:.5f}", file=sys.stderr)) \
        if args.verbose else None
    try:
        model, hist = train(model, ds, cfg, log=log)
    except TrainingDiverged as exc:
        (out / "history.json").write_text(json.dumps(exc.history.to_dict(), indent=1) + "\n")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    digest = save_checkpoint(out / "model.ckpt", model, ds.scaler.digest(),
                             {"grid_fingerprint": ds.grid_fingerprint})
    (out / "history.json").write_text(json.dumps(hist.to_dict(), indent=1) + "\n", encoding="utf-8")
    if args.plot_data:
        with open(out / "loss.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss"])
            for e, (a, b) in enumerate(zip(hist.train_loss, hist.val_loss), start=1):
                w.writerow([e, repr(a), repr(b)])
    config = {"arch": arch, "train": cfg.to_dict(), "precision": args.precision,
              "lambda_max": getattr(getattr(model, "ltilde", None), "lambda_max", None)}
    write_manifest(out / "manifest.json", "train", config, {"seed": args.seed},
                   {"train.bin": _sha256(Path(args.data) / "train.bin"),
                    "validation.bin": _sha256(Path(args.data) / "validation.bin"),
                    "checkpoint": digest})
    print(json.dumps({"checkpoint": str(out / "model.ckpt"), "sha256": digest, "epochs": hist.epochs,
                      "best_epoch": hist.best_epoch, "stop_reason": hist.stop_reason,
                      "initial_train_loss": hist.initial_train_loss,
                      "final_train_loss": hist.final_train_loss}))
    return EXIT_OK


def _compatible(desc: dict, ds) -> None:
    if desc["n"] != ds.n:
        raise InputError(f"model expects n={desc['n']} but dataset has n={ds.n}")
    if desc.get("scaler_digest") and desc["scaler_digest"] != ds.scaler.digest():
        raise InputError("model was trained with a different scaler than this dataset's")


def cmd_eval(args) -> int:
    ds = load_dataset(args.data)
    model, desc = load_checkpoint(args.model)
    _compatible(desc, ds)
    metrics = evaluate(model, ds.scaler, ds.splits[args.split], args.threshold)
    doc = report(metrics)
    doc["accuracy"] = metrics.accuracy
    text = json.dumps(doc, indent=1)
    print(text)
    if args.json:
        Path(args.json).write_text(text + "\n", encoding="utf-8")
        write_manifest(str(args.json) + ".manifest.json", "eval",
                       {"threshold": args.threshold, "split": args.split}, {},
                       {"model": _sha256(args.model), f"{args.split}.bin": _sha256(Path(args.data) / f"{args.split}.bin")})
    if args.plot_data:
        with open(args.plot_data, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            w.writerow(["DR", "" if metrics.dr is None else metrics.dr])
            w.writerow(["FA", "" if metrics.fa is None else metrics.fa])
    return EXIT_OK


@contextlib.contextmanager
def _single_thread():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        yield
        return
    with threadpool_limits(limits=1):
        yield


def cmd_bench(args) -> int:
    model, desc = load_checkpoint(args.model)
    if args.data:
        ds = load_dataset(args.data)
        _compatible(desc, ds)
        feats = ds.splits[args.split].features
        scaler = ds.scaler
    else:
        rng = np.random.default_rng(args.seed if args.seed is not None else _default_seed())
        feats = rng.standard_normal((args.synthetic, desc["n"], 2)).astype(np.float32)
        scaler = Scaler.identity(desc["n"])
    if args.limit:
        feats = feats[:args.limit]
    with _single_thread():
        lat = benchmark_inference(model, scaler, feats, repeats=args.repeat, warmup=args.warmup)
    text = json.dumps(report(latency=lat), indent=1)
    print(text)
    if args.json:
        Path(args.json).write_text(text + "\n", encoding="utf-8")
        write_manifest(str(args.json) + ".manifest.json", "bench",
                       {"repeat": args.repeat, "warmup": args.warmup, "limit": args.limit,
                        "synthetic": None if args.data else args.synthetic}, {},
                       {"model": _sha256(args.model)})
    return EXIT_OK


# -------------------------------------------------------------------- parser

def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fdia-cgcn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convert", help="convert a MATPOWER case to native grid JSON")
    c.add_argument("input", help="MATPOWER .m file (or native .json)")
    c.add_argument("output", help="output JSON path")
    c.set_defaults(func=cmd_convert)

    g = sub.add_parser("gen", help="generate a labelled measurement dataset")
    g.add_argument("grid", help="case file (.m or .json) or bundled case name such as case14")
    g.add_argument("out", help="output dataset directory")
    g.add_argument("--total", type=int, default=36000, help="number of samples (default 36000)")
    g.add_argument("--seed", type=int, default=None, help="master seed (default: $FDIA_SEED or 0)")
    g.add_argument("--noise", type=float, default=0.01, help="relative measurement noise std (default 0.01)")
    g.add_argument("--load-lo", type=float, default=0.8, help="lower load/generation scale factor")
    g.add_argument("--load-hi", type=float, default=1.2, help="upper load/generation scale factor")
    g.add_argument("--scale-lo", type=float, default=0.9, help="lower scale-attack factor")
    g.add_argument("--scale-hi", type=float, default=1.1, help="upper scale-attack factor")
    g.add_argument("--attack-frac", type=float, default=1.0,
                   help="fraction of buses an attack touches (default 1.0: all)")
    g.add_argument("--splits", default="4/6,1/6,1/6", help="train,validation,test fractions")
    g.add_argument("--jobs", type=int, default=1, help="worker processes (output is independent of this)")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a detector on a generated dataset")
    t.add_argument("data", help="dataset directory written by gen")
    t.add_argument("--arch", choices=("cgcn", "fcn"), default="cgcn")
    t.add_argument("--layers", type=int, default=4, help="hidden layers (default 4)")
    t.add_argument("--channels", type=int, default=None,
                   help="channels per CGCN layer or units per FCN layer (default 32 / 64)")
    t.add_argument("--order", type=int, default=5, help="Chebyshev order K (default 5)")
    t.add_argument("--lambda-max", type=float, default=None,
                   help="Laplacian lambda_max (default: power-iteration estimate)")
    t.add_argument("--batch", type=int, default=256)
    t.add_argument("--max-epochs", type=int, default=256)
    t.add_argument("--patience", type=int, default=16, help="early-stopping patience; negative disables")
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=None, help="init/shuffle seed (default: $FDIA_SEED or 0)")
    t.add_argument("--precision", choices=("float32", "float64"), default="float32")
    t.add_argument("--out", required=True, help="output directory for checkpoint, history and manifest")
    t.add_argument("--plot-data", action="store_true", help="also write loss.csv")
    t.add_argument("--verbose", action="store_true", help="log every epoch to stderr")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="detection rate / false alarm of a checkpoint")
    e.add_argument("data", help="dataset directory")
    e.add_argument("model", help="checkpoint written by train")
    e.add_argument("--split", choices=("train", "validation", "test"), default="test")
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--json", default=None, help="also write the metrics JSON here")
    e.add_argument("--plot-data", default=None, help="write DR/FA bar data as CSV here")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="per-sample detection latency")
    b.add_argument("model", help="checkpoint written by train")
    b.add_argument("data", nargs="?", default=None, help="dataset directory (omit for synthetic inputs)")
    b.add_argument("--split", choices=("train", "validation", "test"), default="test")
    b.add_argument("--repeat", type=int, default=1)
    b.add_argument("--warmup", type=int, default=5)
    b.add_argument("--limit", type=int, default=None, help="use only the first N samples")
    b.add_argument("--synthetic", type=int, default=100, help="random samples when no dataset is given")
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--json", default=None, help="also write the latency JSON here")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, *INPUT_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
