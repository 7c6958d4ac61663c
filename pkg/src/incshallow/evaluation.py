"""Measurement protocol: top-k accuracy, regularization grid search, synthetic
benchmark data, and report emission."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import engine
from .errors import (
    ConfigError,
    EmptyInputError,
    EmptyValidationError,
    KTooLargeError,
    SeparationInfeasibleError,
    UnknownClassError,
)
from .features import ClassFeatures, EvalSet, LabeledDataset, build_dataset
from .memory import STRATEGIES, NegativeMemory

#: one point per decade across the searched regularization range
DEFAULT_C_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0)

#: minimal pairwise distance enforced between synthetic class means; the
#: sample noise scale is this floor divided by the requested separation
MEAN_DISTANCE_FLOOR = 1.0


@dataclass(eq=False)
class EvalReport:
    """Accuracy of one state over the cumulative evaluation set."""

    state_index: int
    known_class_count: int
    top1: float
    top5: float
    per_class_accuracy: dict[int, float]
    wall_time: float = 0.0


@dataclass
class ExperimentConfig:
    """Everything a reproducible run needs; validated field by field."""

    memory_budget: int
    strategy: str = "rand"
    seed: int = 0
    c_grid: tuple[float, ...] = DEFAULT_C_GRID
    validation_per_class: int = 20
    dataset_path: str | None = None
    dataset_format: str = "binary"
    eval_path: str | None = None
    eval_format: str = "binary"
    external_path: str | None = None
    external_format: str = "binary"
    batches: object = None  # explicit list of lists, or {"count": n, "size": m}
    retrain_all: bool = False
    per_state_c: bool = False
    tolerance: float = 1e-4
    max_epochs: int = 1000
    positive_weight: float = 1.0
    workers: int = 1
    output_dir: str = "out"

    def validate(self) -> None:
        if not isinstance(self.memory_budget, int) or self.memory_budget < 1:
            raise ConfigError("memory_budget", "must be an integer >= 1")
        if self.strategy not in STRATEGIES:
            raise ConfigError("strategy", f"must be one of {STRATEGIES}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed", "must be an integer >= 0")
        if not self.c_grid:
            raise ConfigError("c_grid", "must be non-empty")
        if any(c <= 0 for c in self.c_grid):
            raise ConfigError("c_grid", "every value must be > 0")
        if self.validation_per_class < 0:
            raise ConfigError("validation_per_class", "must be >= 0")
        if self.tolerance <= 0:
            raise ConfigError("tolerance", "must be > 0")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs", "must be >= 1")
        if self.positive_weight <= 0:
            raise ConfigError("positive_weight", "must be > 0")
        if self.workers < 1:
            raise ConfigError("workers", "must be >= 1")
        if self.strategy == "ind" and self.external_path is None:
            raise ConfigError("external_path", "required for strategy 'ind'")


# ---------------------------------------------------------------------------
# Top-k accuracy
# ---------------------------------------------------------------------------

def _topk_hits(state: engine.IncrementalState, eval_set: EvalSet, k: int) -> np.ndarray:
    ids, W, b = engine.score_matrix(state)
    scores = eval_set.features @ W.T + b
    # columns ascend in class id; stable sort breaks ties toward lower id
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return (ids[order] == eval_set.labels[:, None]).any(axis=1)


def topk_accuracy(state: engine.IncrementalState, eval_set: EvalSet, k: int) -> float:
    """Fraction of samples whose true class is among the k best scores."""
    if len(eval_set) == 0:
        raise EmptyInputError("evaluation set is empty")
    known = set(state.known_classes)
    unknown = [int(c) for c in np.unique(eval_set.labels) if int(c) not in known]
    if unknown:
        raise UnknownClassError(f"evaluation set contains unknown class {unknown[0]}")
    if k > len(state.known_classes):
        raise KTooLargeError(f"k={k} exceeds {len(state.known_classes)} known classes")
    return float(_topk_hits(state, eval_set, k).mean())


def evaluate_state(state: engine.IncrementalState, eval_set: EvalSet, *,
                   wall_time: float = 0.0) -> EvalReport:
    """Top-1/top-5 plus per-class top-1 for one state (top-5 uses min(5, classes))."""
    y = len(state.known_classes)
    k5 = min(5, y)
    hits1 = _topk_hits(state, eval_set, 1) if len(eval_set) else np.empty(0, bool)
    hits5 = _topk_hits(state, eval_set, k5) if len(eval_set) else np.empty(0, bool)
    per_class = {}
    for cid in state.known_classes:
        mask = eval_set.labels == cid
        per_class[cid] = float(hits1[mask].mean()) if mask.any() else 0.0
    return EvalReport(
        state_index=state.index,
        known_class_count=y,
        top1=float(hits1.mean()) if hits1.size else 0.0,
        top5=float(hits5.mean()) if hits5.size else 0.0,
        per_class_accuracy=per_class,
        wall_time=wall_time,
    )


# ---------------------------------------------------------------------------
# Regularization grid search
# ---------------------------------------------------------------------------

def grid_search_c(initial_classes: Sequence[ClassFeatures], memory: NegativeMemory,
                  grid: Sequence[float], *, svm_seed_base: int,
                  tolerance: float = 1e-4, max_epochs: int = 1000,
                  positive_weight: float = 1.0, workers: int = 1,
                  ) -> tuple[float, list[tuple[float, float]]]:
    """Pick C by validation top-1 over the initial batch.

    Trains every initial classifier per grid value on the train partitions and
    scores the pooled validation partitions. Returns (best C, full table);
    accuracy ties go to the smaller C.
    """
    for cf in initial_classes:
        if cf.val_index.size == 0:
            raise EmptyValidationError(f"class {cf.class_id} has no validation samples")
    val_X = np.concatenate([cf.validation for cf in initial_classes])
    val_y = np.concatenate([np.full(cf.val_index.size, cf.class_id, dtype=np.int64)
                            for cf in initial_classes])
    val = EvalSet(val_X, val_y)
    known = tuple(cf.class_id for cf in initial_classes)

    table: list[tuple[float, float]] = []
    best_c, best_acc = None, -1.0
    for c in grid:
        classifiers = engine.train_classes(
            initial_classes, memory, c, svm_seed_base=svm_seed_base, state_index=0,
            tolerance=tolerance, max_epochs=max_epochs,
            positive_weight=positive_weight, workers=workers)
        state = engine.IncrementalState(0, known, classifiers, memory, c)
        acc = topk_accuracy(state, val, 1)
        table.append((float(c), acc))
        if acc > best_acc or (acc == best_acc and c < best_c):
            best_c, best_acc = float(c), acc
    return best_c, table


# ---------------------------------------------------------------------------
# Synthetic benchmark data
# ---------------------------------------------------------------------------

def generate_synthetic(classes: int, dim: int, train_per_class: int,
                       test_per_class: int, separation: float, seed: int, *,
                       validation_per_class: int = 20,
                       ) -> tuple[LabeledDataset, EvalSet]:
    """Desk-scale labeled features: unit-sphere class means with Gaussian noise.

    Means are rejection-sampled until pairwise distances reach
    MEAN_DISTANCE_FLOOR; samples are mean + isotropic noise of per-component
    scale floor/separation, L2-normalized on load like any other feature.
    train_per_class counts post-split training vectors; validation_per_class
    more are generated and held out, test_per_class go to the returned EvalSet.
    """
    if classes < 1 or dim < 1 or train_per_class < 1 or test_per_class < 1:
        raise ValueError("counts must be >= 1")
    if separation <= 0:
        raise ValueError("separation must be > 0")
    rng = np.random.default_rng(seed)
    means = _sample_means(rng, classes, dim)
    sigma = MEAN_DISTANCE_FLOOR / separation

    n_pool = train_per_class + validation_per_class
    ids, raws = [], []
    eval_ids, eval_raws = [], []
    for cid in range(classes):
        pool = _noisy_samples(rng, means[cid], sigma, n_pool, dim)
        test = _noisy_samples(rng, means[cid], sigma, test_per_class, dim)
        ids.append(np.full(n_pool, cid, dtype=np.int64))
        raws.append(pool)
        eval_ids.append(np.full(test_per_class, cid, dtype=np.int64))
        eval_raws.append(test)

    dataset = build_dataset(np.concatenate(ids), np.concatenate(raws),
                            validation_per_class=validation_per_class, seed=seed)
    eval_raw = np.concatenate(eval_raws)
    eval_set = EvalSet(_normalize(eval_raw), np.concatenate(eval_ids), raw=eval_raw)
    return dataset, eval_set


def _normalize(raw: np.ndarray) -> np.ndarray:
    from .features import normalize_rows
    return normalize_rows(raw)


def _sample_means(rng: np.random.Generator, classes: int, dim: int) -> np.ndarray:
    means = np.empty((classes, dim))
    accepted = 0
    attempts = 0
    max_attempts = 200 * classes + 1000
    while accepted < classes:
        if attempts >= max_attempts:
            raise SeparationInfeasibleError(
                f"could not place {classes} class means at pairwise distance "
                f">= {MEAN_DISTANCE_FLOOR} in {dim} dimensions")
        attempts += 1
        cand = rng.normal(size=dim)
        norm = np.linalg.norm(cand)
        if norm < 1e-9:
            continue
        cand /= norm
        if accepted and np.linalg.norm(means[:accepted] - cand, axis=1).min() \
                < MEAN_DISTANCE_FLOOR:
            continue
        means[accepted] = cand
        accepted += 1
    return means


def _noisy_samples(rng, mean, sigma, count, dim) -> np.ndarray:
    out = mean + rng.normal(scale=sigma, size=(count, dim))
    # resample the (vanishingly rare) near-zero rows so normalization is safe
    norms = np.linalg.norm(out, axis=1)
    while (norms < 1e-3).any():
        bad = norms < 1e-3
        out[bad] = mean + rng.normal(scale=sigma, size=(int(bad.sum()), dim))
        norms = np.linalg.norm(out, axis=1)
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

def emit_report(reports: Sequence[EvalReport], path: str | Path) -> None:
    """Write the per-state report CSV plus a deterministic plot-data sibling.

    The CSV at `path` carries measured wall times; `<stem>_plot.csv` holds the
    same accuracy series without timing, so reruns produce identical bytes.
    """
    if not reports:
        raise EmptyInputError("no reports to emit")
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state", "classes", "top1", "top5", "wall_time"])
        for r in reports:
            writer.writerow([r.state_index, r.known_class_count,
                             f"{r.top1:.6f}", f"{r.top5:.6f}", f"{r.wall_time:.6f}"])
    plot_path = path.with_name(path.stem + "_plot.csv")
    with open(plot_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state", "classes", "top1", "top5"])
        for r in reports:
            writer.writerow([r.state_index, r.known_class_count,
                             f"{r.top1:.6f}", f"{r.top5:.6f}"])


def parse_report_csv(path: str | Path) -> list[dict]:
    """Read back an emitted report CSV (used by tests and audits)."""
    with open(path, newline="") as fh:
        return [dict(row) for row in csv.DictReader(fh)]
