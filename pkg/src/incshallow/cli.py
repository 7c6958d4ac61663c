"""Command-line surface: batch experiment runner and its audit subcommands.

Subcommands: run, gen-synthetic, select-negatives, evaluate, gridsearch-c.
Exit codes: 0 success, 1 configuration error (message names the field),
2 data error, 3 runtime error. Only INCSHALLOW_OUTPUT_DIR and
INCSHALLOW_WORKERS may override the config file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import engine
from .errors import (
    ConfigError,
    DimensionMismatchError,
    DuplicateClassError,
    EmptyClassError,
    EmptyValidationError,
    FormatError,
    IncShallowError,
    InsufficientExternalError,
    InsufficientSamplesError,
    KTooLargeError,
    SeparationInfeasibleError,
    UnknownClassError,
    ZeroVectorError,
)
from .evaluation import (
    ExperimentConfig,
    emit_report,
    generate_synthetic,
    grid_search_c,
)
from .features import (
    load_dataset,
    load_eval_set,
    normalize_rows,
    read_records,
    write_dataset,
    write_eval_set,
)
from .memory import save_snapshot

_DATA_ERRORS = (FormatError, InsufficientSamplesError, UnknownClassError,
                InsufficientExternalError, DimensionMismatchError, ZeroVectorError,
                EmptyValidationError, EmptyClassError, OSError)
_USAGE_ERRORS = (ConfigError, KTooLargeError, SeparationInfeasibleError,
                 DuplicateClassError, ValueError)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage by default; our contract says 1."""

    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Config file handling
# ---------------------------------------------------------------------------

_TOP_KEYS = {"memory_budget", "strategy", "seed", "c_grid", "validation_per_class",
             "dataset", "eval", "external", "batches", "solver", "flags",
             "workers", "output_dir"}


def _path_entry(value, field: str) -> tuple[str, str]:
    """Accept 'path' or {path, format}; format defaults by extension."""
    if isinstance(value, str):
        path, fmt = value, None
    elif isinstance(value, dict) and set(value) <= {"path", "format"}:
        path, fmt = value.get("path"), value.get("format")
    else:
        raise ConfigError(field, "must be a path or {path, format}")
    if not isinstance(path, str) or not path:
        raise ConfigError(field, "missing path")
    if fmt is None:
        fmt = "csv" if path.endswith(".csv") else "binary"
    if fmt not in ("binary", "csv"):
        raise ConfigError(field, f"unknown format {fmt!r}")
    return path, fmt


def _expect(value, types, field, what):
    if not isinstance(value, types) or isinstance(value, bool) and types is not bool:
        raise ConfigError(field, f"must be {what}")
    return value


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate a YAML experiment config into an ExperimentConfig."""
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"invalid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config", "top level must be a mapping")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown configuration key")

    cfg = ExperimentConfig(memory_budget=_expect(
        doc.get("memory_budget"), int, "memory_budget", "an integer"))
    if "strategy" in doc:
        cfg.strategy = _expect(doc["strategy"], str, "strategy", "a string")
    if "seed" in doc:
        cfg.seed = _expect(doc["seed"], int, "seed", "an integer")
    if "c_grid" in doc:
        grid = _expect(doc["c_grid"], list, "c_grid", "a list of numbers")
        if not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in grid):
            raise ConfigError("c_grid", "must be a list of numbers")
        cfg.c_grid = tuple(float(c) for c in grid)
    if "validation_per_class" in doc:
        cfg.validation_per_class = _expect(
            doc["validation_per_class"], int, "validation_per_class", "an integer")
    for key in ("dataset", "eval", "external"):
        if key in doc:
            p, f = _path_entry(doc[key], key)
            setattr(cfg, f"{key}_path", p)
            setattr(cfg, f"{key}_format", f)
    if "batches" in doc:
        cfg.batches = doc["batches"]
    solver = doc.get("solver", {})
    if not isinstance(solver, dict) or set(solver) - {"tolerance", "max_epochs",
                                                      "positive_weight"}:
        raise ConfigError("solver", "allows tolerance, max_epochs, positive_weight")
    if "tolerance" in solver:
        cfg.tolerance = float(_expect(solver["tolerance"], (int, float),
                                      "solver.tolerance", "a number"))
    if "max_epochs" in solver:
        cfg.max_epochs = _expect(solver["max_epochs"], int,
                                 "solver.max_epochs", "an integer")
    if "positive_weight" in solver:
        cfg.positive_weight = float(_expect(solver["positive_weight"], (int, float),
                                            "solver.positive_weight", "a number"))
    flags = doc.get("flags", {})
    if not isinstance(flags, dict) or set(flags) - {"retrain_all", "per_state_c"}:
        raise ConfigError("flags", "allows retrain_all, per_state_c")
    cfg.retrain_all = bool(flags.get("retrain_all", False))
    cfg.per_state_c = bool(flags.get("per_state_c", False))
    if "workers" in doc:
        cfg.workers = _expect(doc["workers"], int, "workers", "an integer")
    if "output_dir" in doc:
        cfg.output_dir = _expect(doc["output_dir"], str, "output_dir", "a string")

    if "INCSHALLOW_OUTPUT_DIR" in os.environ:
        cfg.output_dir = os.environ["INCSHALLOW_OUTPUT_DIR"]
    if "INCSHALLOW_WORKERS" in os.environ:
        try:
            cfg.workers = int(os.environ["INCSHALLOW_WORKERS"])
        except ValueError:
            raise ConfigError("workers", "INCSHALLOW_WORKERS must be an integer") from None

    cfg.validate()
    return cfg


def make_plan(cfg: ExperimentConfig, dataset) -> engine.BatchPlan:
    b = cfg.batches
    if b is None:
        raise ConfigError("batches", "required for this command")
    if isinstance(b, dict):
        if set(b) != {"count", "size"}:
            raise ConfigError("batches", "mapping form needs exactly count and size")
        count, size = b["count"], b["size"]
        if not isinstance(count, int) or count < 1:
            raise ConfigError("batches", "count must be an integer >= 1")
        if not isinstance(size, int) or size < 1:
            raise ConfigError("batches", "size must be an integer >= 1")
        try:
            return engine.BatchPlan.consecutive(dataset.class_order, count, size)
        except ValueError as exc:
            raise ConfigError("batches", str(exc)) from None
    if isinstance(b, list) and all(isinstance(x, list) for x in b):
        try:
            plan = engine.BatchPlan(tuple(tuple(int(c) for c in batch) for batch in b))
        except (TypeError, ValueError):
            raise ConfigError("batches", "batch entries must be integers") from None
        return plan
    raise ConfigError("batches", "must be a list of lists or {count, size}")


def config_digest(cfg: ExperimentConfig) -> str:
    """Digest of the experiment-defining fields (output location and worker
    count deliberately excluded: they never change results)."""
    semantic = {
        "memory_budget": cfg.memory_budget, "strategy": cfg.strategy,
        "seed": cfg.seed, "c_grid": list(cfg.c_grid),
        "validation_per_class": cfg.validation_per_class,
        "dataset": [cfg.dataset_path, cfg.dataset_format],
        "eval": [cfg.eval_path, cfg.eval_format],
        "external": [cfg.external_path, cfg.external_format],
        "batches": cfg.batches, "retrain_all": cfg.retrain_all,
        "per_state_c": cfg.per_state_c, "tolerance": cfg.tolerance,
        "max_epochs": cfg.max_epochs, "positive_weight": cfg.positive_weight,
    }
    blob = json.dumps(semantic, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _load_external(cfg: ExperimentConfig) -> np.ndarray | None:
    if cfg.external_path is None:
        return None
    _, _, values = read_records(cfg.external_path, cfg.external_format)
    return normalize_rows(values)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if cfg.dataset_path is None:
        raise ConfigError("dataset", "required for run")
    dataset = load_dataset(cfg.dataset_path, cfg.dataset_format,
                           validation_per_class=cfg.validation_per_class,
                           seed=cfg.seed)
    plan = make_plan(cfg, dataset)
    plan.validate(dataset)
    eval_set = (load_eval_set(cfg.eval_path, cfg.eval_format)
                if cfg.eval_path else None)
    external = _load_external(cfg)

    digest = config_digest(cfg)
    run_dir = Path(cfg.output_dir) / digest[:12]
    reports_dir = run_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S")

    resume_state = engine.load_checkpoint(args.resume) if args.resume else None

    states, reports, grid_table = engine.run_protocol(
        dataset, plan, cfg, eval_set=eval_set, external_pool=external,
        resume_state=resume_state, checkpoint_dir=run_dir / "states")

    emit_report(reports, reports_dir / "report.csv")
    if grid_table is not None:
        _write_grid_table(grid_table, reports_dir / "gridsearch.csv")

    manifest = [
        f"run_id={digest[:12]}",
        f"config_digest={digest}",
        f"package_version={__version__}",
        f"seed={cfg.seed}",
        f"strategy={cfg.strategy}",
        f"memory_budget={cfg.memory_budget}",
        f"c_value={states[-1].c_value!r}",
        f"states={','.join(str(run_dir / 'states' / f'state_{s.index:03d}') for s in states)}",
        f"started={started}",
        f"finished={time.strftime('%Y-%m-%dT%H:%M:%S')}",
    ]
    (run_dir / "manifest.txt").write_text("\n".join(manifest) + "\n")

    for r in reports:
        print(f"state {r.state_index}: classes={r.known_class_count} "
              f"top1={r.top1:.4f} top5={r.top5:.4f} ({r.wall_time:.2f}s)")
    print(f"artifacts under {run_dir}")
    return 0


def _write_grid_table(table, path: Path) -> None:
    lines = ["c,val_top1"]
    lines += [f"{c:g},{acc:.6f}" for c, acc in table]
    path.write_text("\n".join(lines) + "\n")


def cmd_gen_synthetic(args) -> int:
    for name in ("classes", "dim", "train_per_class", "test_per_class"):
        if getattr(args, name) < 1:
            raise ConfigError(name, "must be >= 1")
    if args.separation <= 0:
        raise ConfigError("separation", "must be > 0")
    if args.seed < 0:
        raise ConfigError("seed", "must be >= 0")
    if args.validation_per_class < 0:
        raise ConfigError("validation_per_class", "must be >= 0")
    dataset, eval_set = generate_synthetic(
        args.classes, args.dim, args.train_per_class, args.test_per_class,
        args.separation, args.seed, validation_per_class=args.validation_per_class)
    write_dataset(dataset, args.out_dataset, args.format)
    write_eval_set(eval_set, args.out_eval, args.format)
    print(f"wrote {args.out_dataset} ({args.classes} classes, dim {args.dim}) "
          f"and {args.out_eval}")
    return 0


def cmd_select_negatives(args) -> int:
    cfg = load_config(args.config)
    if cfg.dataset_path is None and cfg.strategy != "ind":
        raise ConfigError("dataset", "required for select-negatives")
    state = engine.load_checkpoint(args.checkpoint)
    seed = args.seed if args.seed is not None else cfg.seed
    if cfg.strategy == "ind":
        views = {}
    else:
        dataset = load_dataset(cfg.dataset_path, cfg.dataset_format,
                               validation_per_class=cfg.validation_per_class,
                               seed=cfg.seed)
        missing = [c for c in state.known_classes if c not in set(dataset.class_order)]
        if missing:
            raise UnknownClassError(f"checkpoint class {missing[0]} not in dataset")
        views = dataset.train_views(state.known_classes)
    mem = engine.build_memory(
        views, strategy=cfg.strategy, budget=cfg.memory_budget,
        seed=engine.memory_seed_for_state(seed, state.index),
        state_index=state.index, external_pool=_load_external(cfg))
    save_snapshot(mem, args.out)
    print(f"wrote {args.out} ({len(mem)} vectors, strategy {cfg.strategy})")
    return 0


def cmd_evaluate(args) -> int:
    state = engine.load_checkpoint(args.checkpoint)
    eval_set = load_eval_set(args.features,
                             "csv" if str(args.features).endswith(".csv") else "binary")
    from .evaluation import topk_accuracy
    ks = []
    for part in args.k.split(","):
        try:
            ks.append(int(part))
        except ValueError:
            raise ConfigError("k", f"not an integer: {part!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise ConfigError("k", "every k must be >= 1")
    accs = [topk_accuracy(state, eval_set, k) for k in ks]
    header = "classes," + ",".join(f"top{k}" for k in ks)
    row = f"{len(state.known_classes)}," + ",".join(f"{a:.6f}" for a in accs)
    text = header + "\n" + row + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_gridsearch_c(args) -> int:
    cfg = load_config(args.config)
    if cfg.dataset_path is None:
        raise ConfigError("dataset", "required for gridsearch-c")
    dataset = load_dataset(cfg.dataset_path, cfg.dataset_format,
                           validation_per_class=cfg.validation_per_class,
                           seed=cfg.seed)
    plan = make_plan(cfg, dataset)
    plan.validate(dataset)
    batch_cfs = [dataset.class_features(cid) for cid in plan.batches[0]]
    mem = engine.build_memory(
        {cf.class_id: cf.train for cf in batch_cfs},
        strategy=cfg.strategy, budget=cfg.memory_budget,
        seed=engine.memory_seed_for_state(cfg.seed, 0), state_index=0,
        external_pool=_load_external(cfg))
    best, table = grid_search_c(
        batch_cfs, mem, cfg.c_grid, svm_seed_base=cfg.seed,
        tolerance=cfg.tolerance, max_epochs=cfg.max_epochs,
        positive_weight=cfg.positive_weight, workers=cfg.workers)
    _write_grid_table(table, Path(args.out))
    print(f"best c: {best:g} (table in {args.out})")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="incshallow",
                     description="Incremental linear classification over "
                                 "precomputed features with a bounded negative memory.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[], help="run the incremental protocol from a config")
    p.add_argument("config")
    p.add_argument("--resume", default=None, metavar="STATE_DIR",
                   help="resume from a state checkpoint directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic feature dataset")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--train-per-class", type=int, default=100)
    p.add_argument("--test-per-class", type=int, default=20)
    p.add_argument("--validation-per-class", type=int, default=20)
    p.add_argument("--separation", type=float, default=6.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    p.add_argument("--out-dataset", required=True)
    p.add_argument("--out-eval", required=True)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("select-negatives",
                       help="rebuild a checkpoint's negative memory and write the snapshot")
    p.add_argument("config")
    p.add_argument("checkpoint")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed (audits across seeds)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select_negatives)

    p = sub.add_parser("evaluate", help="top-k accuracy of a checkpoint on a feature file")
    p.add_argument("checkpoint")
    p.add_argument("features")
    p.add_argument("--k", default="1,5", help="comma-separated k values")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gridsearch-c", help="standalone regularization grid search")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gridsearch_c)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except IncShallowError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
