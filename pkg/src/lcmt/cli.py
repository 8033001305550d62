"""Command-line entry point: train, eval, sweep, gen-data, export-features.

Exit codes: 0 success, 1 error, 2 collapse halt, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import CsvError, gen_blobs, gen_circles, gen_two_moons, load_csv, write_csv
from .network import forward_features, predict
from .persistence import (
    CheckpointError,
    ConfigError,
    FeatureDump,
    export_features,
    format_config,
    load_checkpoint,
    parse_config,
    parse_config_text,
    with_overrides,
)
from .trainer import COLLAPSED, DIVERGED, build_datasets, evaluate, run_training

EXIT_OK, EXIT_ERROR, EXIT_COLLAPSE, EXIT_DIVERGED = 0, 1, 2, 3
SWEEP_PARAMS = ("graph.epsilon", "loss.lambda2", "ema.alpha", "graph.epsilon_scale")

log = logging.getLogger("lcmt")


class UsageError(Exception):
    pass


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_ERROR


def _load_config(args):
    if not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    return parse_config(args.config, args.set or ())


def _checkpoint_parts(path):
    c = load_checkpoint(path)
    cfg = parse_config_text(c.config_text)
    return c, cfg, c.group("student"), c.group("teacher")


def _last_head_bias(params) -> str:
    return max((k for k in params if k.startswith("h.") and k.endswith(".bias")),
               key=lambda k: int(k.split(".")[1]))


def _eval_data(cfg, data_path):
    if data_path:
        ds = load_csv(data_path)
        return ds.X, ds.y
    _, test = build_datasets(cfg)
    return test.X, test.y


# ---------------------------------------------------------------- train

def cmd_train(args) -> int:
    if args.config:
        cfg = _load_config(args)
        resume = load_checkpoint(args.resume) if args.resume else None
    elif args.resume:
        resume = load_checkpoint(args.resume)
        cfg = parse_config_text(resume.config_text, args.set or ())
    else:
        raise UsageError("train needs --config or --resume")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(cfg))
    r = run_training(cfg, out_dir=out, resume=resume)
    print(f"student_err={r.student_error:.4f} teacher_err={r.teacher_error:.4f}")
    if r.outcome == COLLAPSED:
        print(f"collapsed at epoch {r.epochs_run}", file=sys.stderr)
        return EXIT_COLLAPSE
    if r.outcome == DIVERGED:
        print(f"diverged at epoch {r.epochs_run + 1} (non-finite values)", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


# ----------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    _, cfg, student, teacher = _checkpoint_parts(args.checkpoint)
    X, y = _eval_data(cfg, args.data)
    classes = len(student[_last_head_bias(student)])
    if len(y) and int(np.max(y)) >= classes:
        raise UsageError(f"dataset has label {int(np.max(y))} but the network predicts {classes} classes")
    norm = cfg.model.normalize_latent
    print(f"student_err={evaluate(student, X, y, norm):.4f} teacher_err={evaluate(teacher, X, y, norm):.4f}")
    return EXIT_OK


# ---------------------------------------------------------------- sweep

@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple[str, ...]
    seeds: tuple[int, ...]

    def __post_init__(self):
        if self.param not in SWEEP_PARAMS:
            raise UsageError(f"--param must be one of {', '.join(SWEEP_PARAMS)}, got {self.param!r}")
        if not self.values:
            raise UsageError("--values needs at least one value")
        if not self.seeds:
            raise UsageError("--seeds needs at least one seed")


def config_hash(cfg) -> str:
    """Short digest of the config with the seed left out, so seeds of one setting share a prefix."""
    text = "".join(line for line in format_config(cfg).splitlines(True) if not line.startswith("run.seed "))
    return hashlib.sha256(text.encode()).hexdigest()[:10]


def _sweep_job(job):
    config_text, out_dir = job
    cfg = parse_config_text(config_text)
    r = run_training(cfg, out_dir=out_dir)
    return r.outcome, r.student_error, r.teacher_error


def summarize(outcomes, errors) -> tuple[str, float, float]:
    """(status, mean, std) for one sweep row. Any collapsed or diverged seed marks the row."""
    for status in (COLLAPSED, DIVERGED):
        if status in outcomes:
            return status, float("nan"), float("nan")
    e = np.asarray(errors, dtype=float)
    return "ok", float(e.mean()), float(e.std(ddof=1)) if len(e) > 1 else 0.0


def run_sweep(base_cfg, spec: SweepSpec, out: Path, parallel: int = 1) -> list[dict]:
    jobs, keys = [], []
    for v in spec.values:
        for s in spec.seeds:
            cfg = with_overrides(base_cfg, [f"{spec.param}={v}", f"run.seed={s}"])
            jobs.append((format_config(cfg), str(out / f"{config_hash(cfg)}_seed{s}")))
            keys.append((v, s))
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futures = [pool.submit(_sweep_job, j) for j in jobs]
            results = []
            for (v, s), f in zip(keys, futures):
                try:
                    results.append(f.result())
                except Exception as exc:
                    raise RuntimeError(f"sweep run {spec.param}={v} seed={s} failed: {exc}") from exc
    else:
        results = []
        for (v, s), j in zip(keys, jobs):
            try:
                results.append(_sweep_job(j))
            except Exception as exc:
                raise RuntimeError(f"sweep run {spec.param}={v} seed={s} failed: {exc}") from exc
    rows = []
    n = len(spec.seeds)
    for i, v in enumerate(spec.values):
        chunk = results[i * n:(i + 1) * n]
        status, mean, std = summarize([c[0] for c in chunk], [c[2] for c in chunk])
        rows.append(dict(param=spec.param, value=v, status=status, mean=mean, std=std, runs=n,
                         teacher_errors=[c[2] for c in chunk]))
    return rows


def write_sweep_table(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["param", "value", "status", "mean_teacher_error", "std_teacher_error", "runs"])
        for r in rows:
            w.writerow([r["param"], r["value"], r["status"], repr(r["mean"]), repr(r["std"]), r["runs"]])


def format_sweep_row(r) -> str:
    cell = r["status"] if r["status"] != "ok" else f"{r['mean']:.4f} ± {r['std']:.4f}"
    return f"{r['param']}={r['value']:<10} {cell}  (n={r['runs']})"


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    spec = SweepSpec(args.param, tuple(v.strip() for v in args.values.split(",") if v.strip()),
                     _int_list(args.seeds))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_sweep(cfg, spec, out, args.parallel)
    write_sweep_table(out / "sweep.csv", rows)
    for r in rows:
        print(format_sweep_row(r))
    return EXIT_OK


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {text!r}") from None


# ------------------------------------------------------ data / features

def cmd_gen_data(args) -> int:
    if args.kind == "two_moons":
        ds = gen_two_moons(args.n, args.noise, args.seed)
    elif args.kind == "blobs":
        ds = gen_blobs(args.n, args.centers, args.noise, args.seed)
    else:
        ds = gen_circles(args.n, args.noise, args.seed)
    write_csv(args.out, ds)
    return EXIT_OK


def cmd_export_features(args) -> int:
    _, cfg, student, _ = _checkpoint_parts(args.checkpoint)
    if args.data:
        ds = load_csv(args.data)
    else:
        ds, _ = build_datasets(cfg)
    norm = cfg.model.normalize_latent
    z = forward_features(student, ds.X, norm).value
    export_features(args.out, FeatureDump(z=z, label=ds.y, labeled=ds.labeled_mask,
                                          predicted=predict(student, ds.X, norm)))
    return EXIT_OK


# --------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lcmt", description="Mean Teacher with a local clustering regularizer.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run the full curriculum")
    t.add_argument("--config")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    t.add_argument("--out", default="runs/train")
    t.add_argument("--resume", help="continue from a checkpoint")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="student and teacher error of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", help="CSV dataset; default is the config's held-out set")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="ablation over one parameter")
    s.add_argument("--config", required=True)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    s.add_argument("--values", required=True, help="comma-separated")
    s.add_argument("--seeds", default="0,1,2,3,4")
    s.add_argument("--parallel", type=int, default=1)
    s.add_argument("--out", default="runs/sweep")
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    g.add_argument("--kind", choices=("two_moons", "blobs", "circles"), default="two_moons")
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--centers", type=int, default=3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    x = sub.add_parser("export-features", help="dump student latent features as CSV")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--data", help="CSV dataset; default is the config's training set")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_features)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, CsvError, UsageError, ad.DimensionError) as exc:
        return _fail(str(exc))
    except (OSError, ValueError, RuntimeError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
