"""Incremental protocol driver.

A state holds one frozen classifier per known class plus the current negative
memory. Moving to the next state rebuilds the memory over all known classes,
trains one classifier per new class against it (own representatives excluded),
and leaves every earlier classifier untouched, so scores of old classes never
change when new batches arrive.
"""

from __future__ import annotations

import hashlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import memory as memlib
from . import svm
from .errors import (
    DimensionMismatchError,
    DuplicateClassError,
    EmptyClassError,
    FormatError,
    KTooLargeError,
    UnknownClassError,
)
from .features import ClassFeatures, LabeledDataset

_SEED_MEMORY = 0
_SEED_SVM = 1


def solver_seed_for_class(base_seed: int, class_id: int) -> int:
    """Per-class solver seed, independent of which state the class arrives in."""
    return int(np.random.SeedSequence((base_seed, _SEED_SVM, class_id)).generate_state(1)[0])


def memory_seed_for_state(base_seed: int, state_index: int) -> int:
    """Per-transition seed for the rand memory rebuild."""
    return int(np.random.SeedSequence((base_seed, _SEED_MEMORY, state_index)).generate_state(1)[0])


@dataclass(eq=False)
class IncrementalState:
    """The system after a number of batches: frozen classifiers + memory."""

    index: int
    known_classes: tuple[int, ...]
    classifiers: dict[int, svm.LinearClassifier]
    memory: memlib.NegativeMemory
    c_value: float

    @property
    def dimension(self) -> int:
        if self.classifiers:
            return next(iter(self.classifiers.values())).dimension
        return self.memory.dimension


@dataclass(frozen=True)
class BatchPlan:
    """Ordered class-id batches; sizes may be unequal."""

    batches: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        seen: set[int] = set()
        for batch in self.batches:
            for cid in batch:
                if cid in seen:
                    raise DuplicateClassError(f"class {cid} appears in two batches")
                seen.add(cid)

    def validate(self, dataset: LabeledDataset) -> None:
        known = set(dataset.class_order)
        for batch in self.batches:
            for cid in batch:
                if cid not in known:
                    raise UnknownClassError(f"plan names class {cid}, not in dataset")

    @staticmethod
    def consecutive(class_order: Sequence[int], count: int, size: int) -> "BatchPlan":
        """count batches of `size` consecutive classes from the given order."""
        if count * size > len(class_order):
            raise ValueError(
                f"plan wants {count * size} classes, dataset order has {len(class_order)}")
        return BatchPlan(tuple(
            tuple(class_order[i * size:(i + 1) * size]) for i in range(count)))


def build_memory(train_views: Mapping[int, np.ndarray], *, strategy: str, budget: int,
                 seed: int = 0, state_index: int = 0,
                 external_pool: np.ndarray | None = None) -> memlib.NegativeMemory:
    """Construct the negative memory for one state under the given strategy."""
    if strategy == "ind":
        if external_pool is None:
            raise ValueError("strategy 'ind' needs an external pool")
        return memlib.select_ind(external_pool, budget, state_index=state_index)
    known = [(cid, train_views[cid].shape[0]) for cid in sorted(train_views)]
    means = None
    if strategy == "div" and len(known) > budget:
        means = memlib.normalized_class_means(train_views)
    quota = memlib.compute_quota(known, budget, strategy=strategy, seed=seed,
                                 class_means=means)
    if strategy == "rand":
        return memlib.select_rand(train_views, quota, seed, state_index=state_index)
    if strategy == "div":
        return memlib.select_div(train_views, quota, state_index=state_index)
    raise ValueError(f"unknown strategy {strategy!r}")


def train_classes(class_features: Sequence[ClassFeatures], memory: memlib.NegativeMemory,
                  c_value: float, *, svm_seed_base: int, state_index: int,
                  tolerance: float = 1e-4, max_epochs: int = 1000,
                  positive_weight: float = 1.0, workers: int = 1,
                  ) -> dict[int, svm.LinearClassifier]:
    """Train one classifier per class against the shared memory.

    Trainings are independent; with workers > 1 they run on a thread pool over
    the immutable memory and are merged by class id, so the result is
    bit-identical to the serial run.
    """
    ordered = sorted(class_features, key=lambda cf: cf.class_id)

    def one(cf: ClassFeatures) -> svm.LinearClassifier:
        negatives = memlib.negatives_for_class(memory, cf.class_id)
        if negatives.shape[0] == 0:
            raise EmptyClassError(
                f"class {cf.class_id}: negative pool empty after own-class exclusion")
        config = svm.SolverConfig(
            c=c_value, tolerance=tolerance, max_epochs=max_epochs,
            seed=solver_seed_for_class(svm_seed_base, cf.class_id),
            positive_weight=positive_weight)
        return svm.train_svm(cf.train, negatives, config,
                             class_id=cf.class_id, state=state_index)

    if workers > 1 and len(ordered) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trained = list(pool.map(one, ordered))
    else:
        trained = [one(cf) for cf in ordered]
    return {clf.class_id: clf for clf in trained}


def initial_state(new_classes: Sequence[ClassFeatures], strategy: str, seed: int,
                  c_value: float, *, budget: int,
                  external_pool: np.ndarray | None = None,
                  tolerance: float = 1e-4, max_epochs: int = 1000,
                  positive_weight: float = 1.0, svm_seed_base: int | None = None,
                  workers: int = 1,
                  prebuilt_memory: memlib.NegativeMemory | None = None) -> IncrementalState:
    """Train the first batch from scratch; the returned state has index 0."""
    if not new_classes:
        raise EmptyClassError("initial batch is empty")
    return _transition(
        index_after=0, known_before=(), classifiers_before={},
        memory_before=None, new_classes=new_classes, strategy=strategy, seed=seed,
        c_value=c_value, budget=budget, past_train=None, external_pool=external_pool,
        tolerance=tolerance, max_epochs=max_epochs, positive_weight=positive_weight,
        svm_seed_base=seed if svm_seed_base is None else svm_seed_base,
        retrain_all=False, workers=workers, prebuilt_memory=prebuilt_memory)


def advance_state(state: IncrementalState, new_classes: Sequence[ClassFeatures],
                  strategy: str, seed: int, *,
                  past_train: Mapping[int, np.ndarray] | None = None,
                  external_pool: np.ndarray | None = None,
                  tolerance: float = 1e-4, max_epochs: int = 1000,
                  positive_weight: float = 1.0, svm_seed_base: int | None = None,
                  retrain_all: bool = False, workers: int = 1,
                  c_value: float | None = None) -> IncrementalState:
    """One protocol step: rebuild the memory over all known classes, train the
    new classes against it, copy (or, with retrain_all, retrain) the old ones.

    past_train maps class_id -> train features for the already-known classes;
    it is required for rand/div whenever the state knows any class.
    """
    new_ids = [cf.class_id for cf in new_classes]
    dup = set(new_ids) & set(state.known_classes)
    if dup:
        raise DuplicateClassError(f"classes already known: {sorted(dup)}")
    if len(set(new_ids)) != len(new_ids):
        raise DuplicateClassError("batch repeats a class id")
    if state.classifiers and new_classes:
        d = state.dimension
        for cf in new_classes:
            if cf.features.shape[1] != d:
                raise DimensionMismatchError(
                    f"class {cf.class_id} is {cf.features.shape[1]}-d, state is {d}-d")
    if strategy != "ind" and state.known_classes:
        if past_train is None or any(cid not in past_train for cid in state.known_classes):
            raise ValueError("past_train must cover every known class for rand/div")
    return _transition(
        index_after=state.index + 1, known_before=state.known_classes,
        classifiers_before=state.classifiers, memory_before=state.memory,
        new_classes=new_classes, strategy=strategy, seed=seed,
        c_value=state.c_value if c_value is None else c_value,
        budget=state.memory.budget, past_train=past_train,
        external_pool=external_pool, tolerance=tolerance, max_epochs=max_epochs,
        positive_weight=positive_weight,
        svm_seed_base=seed if svm_seed_base is None else svm_seed_base,
        retrain_all=retrain_all, workers=workers, prebuilt_memory=None)


def _transition(*, index_after, known_before, classifiers_before, memory_before,
                new_classes, strategy, seed, c_value, budget, past_train,
                external_pool, tolerance, max_epochs, positive_weight,
                svm_seed_base, retrain_all, workers, prebuilt_memory) -> IncrementalState:
    views: dict[int, np.ndarray] = {}
    if past_train is not None:
        views.update({cid: past_train[cid] for cid in known_before})
    for cf in new_classes:
        views[cf.class_id] = cf.train

    if prebuilt_memory is not None:
        memory = memlib.restamp(prebuilt_memory, index_after)
    elif strategy == "ind" and memory_before is not None and external_pool is None \
            and memory_before.strategy == "ind":
        # constant external memory: carry the entries over unchanged
        memory = memlib.restamp(memory_before, index_after)
    else:
        memory = build_memory(views, strategy=strategy, budget=budget, seed=seed,
                              state_index=index_after, external_pool=external_pool)

    classifiers = dict(classifiers_before)
    if retrain_all and known_before:
        old_cfs = [_as_class_features(cid, views[cid]) for cid in known_before]
        classifiers.update(train_classes(
            old_cfs, memory, c_value, svm_seed_base=svm_seed_base,
            state_index=index_after, tolerance=tolerance, max_epochs=max_epochs,
            positive_weight=positive_weight, workers=workers))
    if new_classes:
        classifiers.update(train_classes(
            new_classes, memory, c_value, svm_seed_base=svm_seed_base,
            state_index=index_after, tolerance=tolerance, max_epochs=max_epochs,
            positive_weight=positive_weight, workers=workers))

    return IncrementalState(
        index=index_after,
        known_classes=tuple(known_before) + tuple(cf.class_id for cf in new_classes),
        classifiers=classifiers,
        memory=memory,
        c_value=c_value,
    )


def _as_class_features(cid: int, train: np.ndarray) -> ClassFeatures:
    idx = np.arange(train.shape[0], dtype=np.int64)
    return ClassFeatures(cid, train.astype(np.float32), np.asarray(train, dtype=np.float64),
                         idx, np.empty(0, dtype=np.int64))


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def score_matrix(state: IncrementalState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(class_ids ascending, weight matrix (y, d), bias vector (y,))."""
    ids = np.fromiter(sorted(state.classifiers), dtype=np.int64)
    W = np.vstack([state.classifiers[int(c)].weights for c in ids])
    b = np.array([state.classifiers[int(c)].bias for c in ids])
    return ids, W, b


def predict_topk(state: IncrementalState, x: np.ndarray, k: int) -> list[tuple[int, float]]:
    """The k highest-scoring classes on x, descending; score ties go to the
    lower class id."""
    y = len(state.known_classes)
    if k > y:
        raise KTooLargeError(f"k={k} exceeds {y} known classes")
    x = np.asarray(x, dtype=np.float64)
    ids, W, b = score_matrix(state)
    if x.shape[0] != W.shape[1]:
        raise DimensionMismatchError(
            f"input is {x.shape[0]}-d, classifiers expect {W.shape[1]}-d")
    scores = W @ x + b
    # ids ascend, so a stable sort on -scores breaks ties toward lower class id
    order = np.argsort(-scores, kind="stable")[:k]
    return [(int(ids[i]), float(scores[i])) for i in order]


# ---------------------------------------------------------------------------
# Protocol runner
# ---------------------------------------------------------------------------

def run_protocol(dataset: LabeledDataset, plan: BatchPlan, config, *,
                 eval_set=None, external_pool: np.ndarray | None = None,
                 resume_state: IncrementalState | None = None,
                 checkpoint_dir: str | Path | None = None):
    """Run the full incremental protocol.

    Returns (states, reports, grid_table). The regularization C is picked by
    grid search on the initial batch's validation data when the grid has more
    than one value; with per_state_c it is re-searched at every transition.
    Each state is evaluated on eval_set restricted to its known classes
    (default: the pooled validation partitions). Deterministic given
    config.seed, including under any worker count.
    """
    from .evaluation import evaluate_state, grid_search_c  # cycle: eval scores states

    plan.validate(dataset)
    solver_kw = dict(tolerance=config.tolerance, max_epochs=config.max_epochs,
                     positive_weight=config.positive_weight)
    states: list[IncrementalState] = []
    reports = []
    grid_table = None

    if eval_set is None:
        from .features import pooled_validation
        covered = [cid for batch in plan.batches for cid in batch]
        eval_set = pooled_validation(dataset, covered)

    state = resume_state
    start = 0 if state is None else state.index + 1
    if start >= len(plan.batches):
        raise ValueError(
            f"resume state {state.index} already covers the {len(plan.batches)}-batch plan")
    for s, batch in enumerate(plan.batches):
        if s < start:
            continue
        t0 = time.perf_counter()
        batch_cfs = [dataset.class_features(cid) for cid in batch]
        mem_seed = memory_seed_for_state(config.seed, s)
        if s == 0:
            prebuilt = build_memory(
                {cf.class_id: cf.train for cf in batch_cfs},
                strategy=config.strategy, budget=config.memory_budget,
                seed=mem_seed, state_index=0, external_pool=external_pool)
            if len(config.c_grid) > 1:
                c_star, grid_table = grid_search_c(
                    batch_cfs, prebuilt, config.c_grid,
                    svm_seed_base=config.seed, workers=config.workers, **solver_kw)
            else:
                c_star = config.c_grid[0]
            state = initial_state(
                batch_cfs, config.strategy, mem_seed, c_star,
                budget=config.memory_budget, external_pool=external_pool,
                svm_seed_base=config.seed, workers=config.workers,
                prebuilt_memory=prebuilt, **solver_kw)
        else:
            past = dataset.train_views(state.known_classes)
            c_value = None
            if config.per_state_c and len(config.c_grid) > 1:
                c_value = _search_c_for_batch(
                    state, batch_cfs, dataset, config, external_pool, past, solver_kw)
            state = advance_state(
                state, batch_cfs, config.strategy, mem_seed,
                past_train=past, external_pool=external_pool,
                svm_seed_base=config.seed, retrain_all=config.retrain_all,
                workers=config.workers, c_value=c_value, **solver_kw)
        states.append(state)
        if checkpoint_dir is not None:
            save_checkpoint(state, Path(checkpoint_dir) / f"state_{state.index:03d}",
                            seed=config.seed)
        subset = eval_set.restrict(state.known_classes)
        reports.append(evaluate_state(state, subset,
                                      wall_time=time.perf_counter() - t0))
    return states, reports, grid_table


def _search_c_for_batch(state, batch_cfs, dataset, config, external_pool, past, solver_kw):
    """per_state_c: re-pick C by validation top-1 over all known classes,
    scoring frozen old classifiers together with candidate new ones."""
    from .evaluation import topk_accuracy
    from .features import pooled_validation

    known_after = state.known_classes + tuple(cf.class_id for cf in batch_cfs)
    val = pooled_validation(dataset, known_after)
    views = dict(past)
    views.update({cf.class_id: cf.train for cf in batch_cfs})
    mem = build_memory(views, strategy=config.strategy, budget=config.memory_budget,
                       seed=memory_seed_for_state(config.seed, state.index + 1),
                       state_index=state.index + 1, external_pool=external_pool)
    best_c, best_acc = None, -1.0
    for c in config.c_grid:
        trial = train_classes(batch_cfs, mem, c, svm_seed_base=config.seed,
                              state_index=state.index + 1, workers=config.workers,
                              **solver_kw)
        merged = dict(state.classifiers)
        merged.update(trial)
        trial_state = IncrementalState(state.index + 1, known_after, merged, mem, c)
        acc = topk_accuracy(trial_state, val, 1)
        if acc > best_acc or (acc == best_acc and c < best_c):
            best_c, best_acc = c, acc
    return best_c


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(state: IncrementalState, dirpath: str | Path,
                    seed: int | None = None) -> None:
    """Write memory snapshot, classifiers, and a key=value manifest with digests."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    memlib.save_snapshot(state.memory, dirpath / "memory.dsf")
    svm.save_classifiers(dirpath / "classifiers.dsc",
                         [state.classifiers[c] for c in sorted(state.classifiers)])
    lines = [
        f"state_index={state.index}",
        f"classes={','.join(str(c) for c in state.known_classes)}",
        f"c_value={state.c_value!r}",
        f"strategy={state.memory.strategy}",
        f"memory_budget={state.memory.budget}",
        f"seed={'' if seed is None else seed}",
        f"digest_memory={_sha256(dirpath / 'memory.dsf')}",
        f"digest_classifiers={_sha256(dirpath / 'classifiers.dsc')}",
        f"created={time.strftime('%Y-%m-%dT%H:%M:%S')}",
    ]
    (dirpath / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_checkpoint(dirpath: str | Path) -> IncrementalState:
    """Rebuild a state from a checkpoint directory, verifying content digests."""
    dirpath = Path(dirpath)
    manifest = _read_manifest(dirpath / "manifest.txt")
    for name, key in (("memory.dsf", "digest_memory"),
                      ("classifiers.dsc", "digest_classifiers")):
        if _sha256(dirpath / name) != manifest[key]:
            raise FormatError(f"{dirpath / name}: digest mismatch with manifest")
    classifiers = {clf.class_id: clf
                   for clf in svm.load_classifiers(dirpath / "classifiers.dsc")}
    known = tuple(int(c) for c in manifest["classes"].split(",") if c != "")
    index = int(manifest["state_index"])
    memory = memlib.load_snapshot(
        dirpath / "memory.dsf", budget=int(manifest["memory_budget"]),
        strategy=manifest["strategy"], state_index=index)
    return IncrementalState(
        index=index, known_classes=known, classifiers=classifiers,
        memory=memory, c_value=float(manifest["c_value"]))


def _read_manifest(path: Path) -> dict[str, str]:
    out = {}
    for line in path.read_text().splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            out[key] = value
    return out


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
