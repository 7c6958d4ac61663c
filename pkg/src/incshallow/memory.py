"""Bounded negative-feature memory and its selection strategies.

The memory holds at most `budget` feature vectors shared by every classifier
trained in a state. Three strategies fill it: `ind` (a fixed external pool),
`rand` (seeded balanced per-class sampling), and `div` (greedy per-class
diversification). Entries are grouped by ascending class id; similarity is the
dot product, which equals cosine on the unit-norm vectors stored here.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyInputError, InsufficientExternalError
from .features import EXTERNAL_ID, ZERO_NORM, l2_normalize, normalize_rows, read_records, write_records

STRATEGIES = ("ind", "rand", "div")


@dataclass(frozen=True)
class Quota:
    """Per-class representation counts for one memory rebuild.

    base = floor(budget / classes); the remainder goes, one each, to the
    lowest class ids. A class with fewer samples than its share contributes
    what it has; the deficit stays unfilled so balance is preserved.
    """

    base: int
    remainder: int
    per_class: dict[int, int]

    @property
    def budget(self) -> int:
        return len(self.per_class) * self.base + self.remainder

    @property
    def total(self) -> int:
        return sum(self.per_class.values())


@dataclass(eq=False)
class NegativeMemory:
    """The bounded pool of negative features with per-entry provenance.

    provenance holds the source class id (EXTERNAL_ID for external vectors);
    source_index the within-class row index, so no (class, index) pair can
    repeat. Built once per state transition, then treated as immutable.
    """

    budget: int
    strategy: str
    state_index: int
    vectors: np.ndarray
    provenance: np.ndarray
    source_index: np.ndarray

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]


def compute_quota(known_classes: Sequence[tuple[int, int]], budget: int, *,
                  strategy: str = "rand", seed: int | None = None,
                  class_means: Sequence[tuple[int, np.ndarray]] | None = None) -> Quota:
    """Number of memory representatives per class for a given budget.

    With y classes and budget K: each class gets floor(K/y), the K mod y
    leftover slots go to the lowest class ids, and shares are capped at the
    class's available count. When y > K not every class fits; a K-subset gets
    one slot each, chosen by `strategy` (rand: seeded uniform sample, needs
    `seed`; div: greedy diversification over `class_means`).
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if not known_classes:
        raise ValueError("need at least one known class")
    ordered = sorted(known_classes)
    y = len(ordered)

    if y > budget:
        chosen = set(_choose_class_subset(ordered, budget, strategy, seed, class_means))
        per = {cid: (1 if cid in chosen else 0) for cid, _ in ordered}
        return Quota(base=0, remainder=budget, per_class=per)

    base, rem = divmod(budget, y)
    per = {}
    for pos, (cid, avail) in enumerate(ordered):
        share = base + (1 if pos < rem else 0)
        per[cid] = min(share, avail)
    return Quota(base=base, remainder=rem, per_class=per)


def _choose_class_subset(ordered, budget, strategy, seed, class_means):
    if strategy == "rand":
        if seed is None:
            raise ValueError("rand subset selection needs a seed")
        rng = np.random.default_rng((seed, len(ordered)))
        picked = rng.choice(len(ordered), size=budget, replace=False)
        return [ordered[i][0] for i in np.sort(picked)]
    if strategy == "div":
        if class_means is None:
            raise ValueError("div subset selection needs class means")
        return diversify_classes(class_means, budget)
    raise ValueError(f"strategy {strategy!r} cannot pick a class subset")


#: similarities are cosines in [-1, 1]; values this close count as tied, so
#: mathematically equal picks resolve to the lowest index regardless of the
#: last-ulp noise of any particular dot-product evaluation order
TIE_TOL = 1e-12


def greedy_diversify(items: np.ndarray, n: int) -> np.ndarray:
    """Pick n item indices by greedy diversification; rows must be unit-norm.

    The first pick is the item most similar to the normalized mean of all
    items (the 'center'); every later pick is the remaining item with the
    lowest mean similarity to those already selected. Ties (within TIE_TOL)
    go to the lowest index. Returns indices in selection order.
    """
    items = np.asarray(items, dtype=np.float64)
    m = items.shape[0]
    if m == 0:
        raise EmptyInputError("no items to diversify")
    if n > m:
        raise ValueError(f"cannot pick {n} of {m} items")
    if n <= 0:
        return np.empty(0, dtype=np.int64)

    mean = items.mean(axis=0)
    norm = np.linalg.norm(mean)
    center = mean / norm if norm >= ZERO_NORM else np.zeros_like(mean)
    sims = items @ center
    first = int(np.flatnonzero(sims >= sims.max() - TIE_TOL)[0])

    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = first
    taken = np.zeros(m, dtype=bool)
    taken[first] = True
    sim_sum = items @ items[first]
    for step in range(1, n):
        mean_sim = np.where(taken, np.inf, sim_sum / step)
        nxt = int(np.flatnonzero(mean_sim <= mean_sim.min() + TIE_TOL)[0])
        chosen[step] = nxt
        taken[nxt] = True
        sim_sum = sim_sum + items @ items[nxt]
    return chosen


def diversify_classes(class_means: Sequence[tuple[int, np.ndarray]], n: int) -> list[int]:
    """Greedy diversification over class mean vectors; returns class ids in order.

    Means must already be L2-normalized (see normalized_class_means). This is
    the class-level variant used to pick which classes are represented when
    the budget holds fewer vectors than there are classes.
    """
    if not class_means:
        raise EmptyInputError("no class means")
    ids = [cid for cid, _ in class_means]
    mat = np.vstack([np.asarray(m, dtype=np.float64) for _, m in class_means])
    order = greedy_diversify(mat, n)
    return [ids[i] for i in order]


def normalized_class_means(train_views: Mapping[int, np.ndarray]) -> list[tuple[int, np.ndarray]]:
    """Unit-norm mean feature vector per class, ascending class id."""
    return [(cid, l2_normalize(train_views[cid].mean(axis=0)))
            for cid in sorted(train_views)]


def _assemble(parts, budget, strategy, state_index, dim) -> NegativeMemory:
    if parts:
        vectors = np.concatenate([p[0] for p in parts])
        provenance = np.concatenate([p[1] for p in parts])
        source = np.concatenate([p[2] for p in parts])
    else:
        vectors = np.empty((0, dim))
        provenance = np.empty(0, dtype=np.int64)
        source = np.empty(0, dtype=np.int64)
    return NegativeMemory(budget=budget, strategy=strategy, state_index=state_index,
                          vectors=vectors, provenance=provenance, source_index=source)


def select_rand(train_views: Mapping[int, np.ndarray], quota: Quota, seed: int, *,
                state_index: int = 0) -> NegativeMemory:
    """Balanced seeded sampling: per class, a uniform sample (without
    replacement) of quota-many train vectors, stored in ascending row order."""
    parts = []
    dim = next(iter(train_views.values())).shape[1] if train_views else 0
    for cid in sorted(train_views):
        q = quota.per_class.get(cid, 0)
        if q == 0:
            continue
        view = train_views[cid]
        rng = np.random.default_rng((seed, cid))
        idx = np.sort(rng.choice(view.shape[0], size=min(q, view.shape[0]),
                                 replace=False)).astype(np.int64)
        parts.append((view[idx], np.full(idx.size, cid, dtype=np.int64), idx))
    return _assemble(parts, quota.budget, "rand", state_index, dim)


def select_div(train_views: Mapping[int, np.ndarray], quota: Quota, *,
               state_index: int = 0) -> NegativeMemory:
    """Per class, the quota-sized greedy-diversified subset of its train
    vectors, in selection order. Seed-free and fully deterministic."""
    parts = []
    dim = next(iter(train_views.values())).shape[1] if train_views else 0
    for cid in sorted(train_views):
        q = quota.per_class.get(cid, 0)
        if q == 0:
            continue
        view = train_views[cid]
        idx = greedy_diversify(view, min(q, view.shape[0]))
        parts.append((view[idx], np.full(idx.size, cid, dtype=np.int64), idx))
    return _assemble(parts, quota.budget, "div", state_index, dim)


def select_ind(external: np.ndarray, budget: int, *, state_index: int = 0) -> NegativeMemory:
    """The first `budget` vectors of an externally supplied pool; the memory
    is then constant across all states."""
    external = np.asarray(external, dtype=np.float64)
    if external.shape[0] < budget:
        raise InsufficientExternalError(
            f"external pool holds {external.shape[0]} vectors, budget is {budget}")
    idx = np.arange(budget, dtype=np.int64)
    return NegativeMemory(
        budget=budget, strategy="ind", state_index=state_index,
        vectors=external[:budget].copy(),
        provenance=np.full(budget, EXTERNAL_ID, dtype=np.int64),
        source_index=idx,
    )


def negatives_for_class(memory: NegativeMemory, class_id: int) -> np.ndarray:
    """All memory vectors except the class's own representatives."""
    return memory.vectors[memory.provenance != class_id]


def restamp(memory: NegativeMemory, state_index: int) -> NegativeMemory:
    """Same entries, new state index (used when an `ind` memory is carried over)."""
    return replace(memory, state_index=state_index)


# ---------------------------------------------------------------------------
# Snapshots for reproducibility audits
# ---------------------------------------------------------------------------

def save_snapshot(memory: NegativeMemory, path: str | Path, fmt: str = "binary") -> None:
    """Write the memory in the feature-file format, provenance in the class slot."""
    write_records(path, memory.provenance.astype(np.int32),
                  memory.vectors.astype(np.float32), fmt)


def load_snapshot(path: str | Path, *, budget: int, strategy: str,
                  state_index: int = 0, fmt: str = "binary") -> NegativeMemory:
    """Read a snapshot back; within-class source indices are not stored on disk."""
    _, provenance, values = read_records(path, fmt)
    return NegativeMemory(
        budget=budget, strategy=strategy, state_index=state_index,
        vectors=normalize_rows(values),
        provenance=provenance.astype(np.int64),
        source_index=np.full(provenance.shape[0], -1, dtype=np.int64),
    )
