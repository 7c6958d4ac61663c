"""Feature-vector data model, L2 normalization, and the feature file formats.

All computation downstream works on unit-norm float64 vectors; files carry the
raw float32 features so that write -> load round trips are bit-exact.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import (
    FormatError,
    InsufficientSamplesError,
    ZeroVectorError,
)

MAGIC = b"DSF1"
VERSION = 1
_HEADER = struct.Struct("<4sHIQ")  # magic, u16 version, u32 dimension, u64 record count

NORM_TOL = 1e-6
ZERO_NORM = 1e-12

#: provenance tag for vectors that come from an external pool, not a known class
EXTERNAL_ID = -1


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Return v / ||v||_2 as float64.

    Raises ZeroVectorError when ||v||_2 < 1e-12 (a corrupt input feature).
    """
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm < ZERO_NORM:
        raise ZeroVectorError(f"vector norm {norm:g} below {ZERO_NORM:g}")
    return v / norm


def normalize_rows(m: np.ndarray) -> np.ndarray:
    """L2-normalize every row of a (n, d) matrix; raises on near-zero rows."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    bad = np.flatnonzero(norms < ZERO_NORM)
    if bad.size:
        raise ZeroVectorError(f"row {bad[0]} has norm {norms[bad[0]]:g}")
    return m / norms[:, None]


# ---------------------------------------------------------------------------
# Raw record I/O (shared by datasets, eval sets, and memory snapshots)
# ---------------------------------------------------------------------------

def read_records(path: str | Path, fmt: str = "binary") -> tuple[int, np.ndarray, np.ndarray]:
    """Read a feature file.

    Returns (dimension, class_ids int array of shape (n,), values float32 (n, d)).
    Raises FormatError naming the offending record for any malformed content.
    """
    if fmt == "binary":
        return _read_binary(Path(path))
    if fmt == "csv":
        return _read_csv(Path(path))
    raise ValueError(f"unknown format {fmt!r}")


def write_records(path: str | Path, class_ids: np.ndarray, values: np.ndarray,
                  fmt: str = "binary") -> None:
    """Write (class_id, values) records; `values` is cast to float32."""
    class_ids = np.asarray(class_ids, dtype=np.int32)
    values = np.asarray(values, dtype=np.float32)
    if values.ndim != 2 or values.shape[0] != class_ids.shape[0]:
        raise FormatError("class_ids and values must have matching record counts")
    if values.shape[0] == 0:
        raise FormatError("refusing to write a file with no records")
    if fmt == "binary":
        _write_binary(Path(path), class_ids, values)
    elif fmt == "csv":
        _write_csv(Path(path), class_ids, values)
    else:
        raise ValueError(f"unknown format {fmt!r}")


def _record_dtype(d: int) -> np.dtype:
    return np.dtype([("class_id", "<i4"), ("values", "<f4", (d,))])


def _read_binary(path: Path) -> tuple[int, np.ndarray, np.ndarray]:
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than header")
    magic, version, d, n = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if d < 1:
        raise FormatError(f"{path}: dimension {d} < 1")
    dtype = _record_dtype(d)
    expected = _HEADER.size + n * dtype.itemsize
    if len(blob) != expected:
        raise FormatError(
            f"{path}: size {len(blob)} != header + {n} records ({expected} bytes)")
    if n == 0:
        raise FormatError(f"{path}: file contains no records")
    records = np.frombuffer(blob, dtype=dtype, offset=_HEADER.size)
    values = records["values"].astype(np.float32)
    _check_finite(path, values)
    return int(d), records["class_id"].astype(np.int64), values


def _write_binary(path: Path, class_ids: np.ndarray, values: np.ndarray) -> None:
    n, d = values.shape
    records = np.empty(n, dtype=_record_dtype(d))
    records["class_id"] = class_ids
    records["values"] = values
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, d, n))
        fh.write(records.tobytes())


def _read_csv(path: Path) -> tuple[int, np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if not header or header[0] != "class_id":
            raise FormatError(f"{path}: header must start with 'class_id'")
        d = len(header) - 1
        if d < 1:
            raise FormatError(f"{path}: header declares no feature columns")
        ids, rows = [], []
        for idx, row in enumerate(reader):
            if len(row) != d + 1:
                raise FormatError(
                    f"{path}: record {idx} has {len(row) - 1} values, expected {d}")
            try:
                ids.append(int(row[0]))
                rows.append([float(x) for x in row[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}: record {idx}: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: file contains no records")
    values = np.asarray(rows, dtype=np.float32)
    _check_finite(path, values)
    return d, np.asarray(ids, dtype=np.int64), values


def _write_csv(path: Path, class_ids: np.ndarray, values: np.ndarray) -> None:
    n, d = values.shape
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class_id"] + [f"f{i}" for i in range(d)])
        for cid, row in zip(class_ids, values):
            # %.9g round-trips float32 exactly
            writer.writerow([int(cid)] + [f"{x:.9g}" for x in row])


def _check_finite(path: Path, values: np.ndarray) -> None:
    finite = np.isfinite(values).all(axis=1)
    if not finite.all():
        idx = int(np.flatnonzero(~finite)[0])
        raise FormatError(f"{path}: record {idx} contains a non-finite value")


# ---------------------------------------------------------------------------
# Labeled datasets with a per-class train/validation split
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ClassFeatures:
    """All feature vectors of one class.

    `raw` holds the float32 features exactly as stored on disk, in file order;
    `features` the unit-norm float64 rows used for computation. The split is a
    pure function of (raw content order, seed, validation_per_class), stored as
    sorted row indices so train/validation views preserve file order.
    """

    class_id: int
    raw: np.ndarray
    features: np.ndarray
    train_index: np.ndarray
    val_index: np.ndarray

    @property
    def train(self) -> np.ndarray:
        return self.features[self.train_index]

    @property
    def validation(self) -> np.ndarray:
        return self.features[self.val_index]

    @property
    def size(self) -> int:
        return self.raw.shape[0]


@dataclass(eq=False)
class LabeledDataset:
    """Per-class features plus the class order fixing incremental batch membership."""

    dimension: int
    classes: tuple[ClassFeatures, ...]
    class_order: tuple[int, ...]
    seed: int
    validation_per_class: int
    _by_id: dict[int, ClassFeatures] = field(init=False, repr=False)

    def __post_init__(self):
        self._by_id = {cf.class_id: cf for cf in self.classes}

    def class_features(self, class_id: int) -> ClassFeatures:
        return self._by_id[class_id]

    def train_views(self, class_ids: Iterable[int] | None = None) -> dict[int, np.ndarray]:
        """Map class_id -> train feature matrix, for the given ids (default: all)."""
        ids = self.class_order if class_ids is None else class_ids
        return {cid: self._by_id[cid].train for cid in ids}

    @property
    def class_ids(self) -> tuple[int, ...]:
        return self.class_order


def split_indices(n: int, validation_per_class: int, seed: int,
                  class_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded per-class split: shuffle rows, hold out the first `validation_per_class`.

    Indices are returned sorted so the derived matrices keep file order.
    """
    rng = np.random.default_rng((seed, class_id))
    perm = rng.permutation(n)
    val = np.sort(perm[:validation_per_class])
    train = np.sort(perm[validation_per_class:])
    return train.astype(np.int64), val.astype(np.int64)


def build_dataset(class_ids: np.ndarray, values: np.ndarray, *,
                  validation_per_class: int = 20, seed: int = 0) -> LabeledDataset:
    """Assemble a LabeledDataset from raw records (the load_dataset core).

    Rows are grouped by class in order of first appearance; every vector is
    L2-normalized; each class gets its deterministic train/validation split.
    """
    if validation_per_class < 0:
        raise ValueError("validation_per_class must be >= 0")
    if seed < 0:
        raise ValueError("seed must be >= 0")
    d = values.shape[1]
    order: list[int] = []
    rows_by_class: dict[int, list[int]] = {}
    for i, cid in enumerate(class_ids):
        cid = int(cid)
        if cid not in rows_by_class:
            rows_by_class[cid] = []
            order.append(cid)
        rows_by_class[cid].append(i)

    classes = []
    for cid in order:
        if cid < 0:
            raise FormatError(f"class id {cid} is negative")
        raw = values[rows_by_class[cid]]
        n = raw.shape[0]
        if n <= validation_per_class:
            raise InsufficientSamplesError(
                f"class {cid} has {n} vectors; needs more than "
                f"validation_per_class={validation_per_class}")
        try:
            feats = normalize_rows(raw)
        except ZeroVectorError as exc:
            raise FormatError(f"class {cid}: {exc}") from None
        train_idx, val_idx = split_indices(n, validation_per_class, seed, cid)
        classes.append(ClassFeatures(cid, raw, feats, train_idx, val_idx))

    return LabeledDataset(
        dimension=d,
        classes=tuple(classes),
        class_order=tuple(order),
        seed=seed,
        validation_per_class=validation_per_class,
    )


def load_dataset(path: str | Path, fmt: str = "binary", *,
                 validation_per_class: int = 20, seed: int = 0) -> LabeledDataset:
    """Load a feature file into a LabeledDataset (normalized, split, immutable)."""
    d, class_ids, values = read_records(path, fmt)
    del d
    return build_dataset(class_ids, values,
                         validation_per_class=validation_per_class, seed=seed)


def write_dataset(dataset: LabeledDataset, path: str | Path, fmt: str = "binary") -> None:
    """Write the dataset's raw features; load(write(D)) reproduces D bit-exactly."""
    if not dataset.classes:
        raise FormatError("dataset has no classes")
    class_ids = np.concatenate(
        [np.full(cf.size, cf.class_id, dtype=np.int32) for cf in dataset.classes])
    values = np.concatenate([cf.raw for cf in dataset.classes])
    write_records(path, class_ids, values, fmt)


def datasets_equal(a: LabeledDataset, b: LabeledDataset) -> bool:
    """Bit-exact equality of two datasets (raw bytes, splits, ordering)."""
    if (a.dimension, a.class_order, a.seed, a.validation_per_class) != \
            (b.dimension, b.class_order, b.seed, b.validation_per_class):
        return False
    for ca, cb in zip(a.classes, b.classes):
        if ca.class_id != cb.class_id:
            return False
        if ca.raw.shape != cb.raw.shape or not np.array_equal(ca.raw, cb.raw):
            return False
        if not np.array_equal(ca.train_index, cb.train_index):
            return False
        if not np.array_equal(ca.val_index, cb.val_index):
            return False
    return True


# ---------------------------------------------------------------------------
# Flat labeled eval sets (no split)
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class EvalSet:
    """Labeled evaluation features: unit-norm float64 rows plus int labels.

    `raw` keeps the on-disk float32 payload when known, so the set can be
    written back without a lossy re-cast.
    """

    features: np.ndarray
    labels: np.ndarray
    raw: np.ndarray | None = None

    @property
    def dimension(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]

    def restrict(self, class_ids: Iterable[int]) -> "EvalSet":
        """Keep only samples whose label is in `class_ids`."""
        keep = np.isin(self.labels, np.fromiter(class_ids, dtype=np.int64))
        raw = self.raw[keep] if self.raw is not None else None
        return EvalSet(self.features[keep], self.labels[keep], raw)


def load_eval_set(path: str | Path, fmt: str = "binary") -> EvalSet:
    d, class_ids, values = read_records(path, fmt)
    del d
    return EvalSet(normalize_rows(values), class_ids.astype(np.int64), values)


def write_eval_set(eval_set: EvalSet, path: str | Path, fmt: str = "binary") -> None:
    raw = eval_set.raw if eval_set.raw is not None else eval_set.features
    write_records(path, eval_set.labels.astype(np.int32), raw, fmt)


def pooled_validation(dataset: LabeledDataset,
                      class_ids: Iterable[int] | None = None) -> EvalSet:
    """Concatenate the validation partitions of the given classes into an EvalSet."""
    ids = dataset.class_order if class_ids is None else tuple(class_ids)
    mats, labels = [], []
    for cid in ids:
        cf = dataset.class_features(cid)
        if cf.val_index.size:
            mats.append(cf.validation)
            labels.append(np.full(cf.val_index.size, cid, dtype=np.int64))
    if not mats:
        return EvalSet(np.empty((0, dataset.dimension)), np.empty(0, dtype=np.int64))
    return EvalSet(np.concatenate(mats), np.concatenate(labels))
