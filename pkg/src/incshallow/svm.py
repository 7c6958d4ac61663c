"""Binary linear classifier trained by dual coordinate descent.

Solves min_w 0.5*||w||^2 + C * sum_i u_i * max(0, 1 - y_i * (w.x_i + b)) with
the bias folded in as a constant-1 feature (so the bias is regularized).
The dual box problem is swept coordinate-wise in a seeded random permutation
per epoch, liblinear style, which yields an exact duality-gap certificate.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .errors import DimensionMismatchError, EmptyClassError, FormatError

CLF_MAGIC = b"DSC1"
_CLF_HEADER = struct.Struct("<4sIiIf")  # magic, u32 d, i32 class_id, u32 state, f32 c


@dataclass(frozen=True)
class SolverConfig:
    """Hyperparameters of one training run.

    positive_weight multiplies C for positive examples only (class-imbalance
    knob; 1.0 keeps the plain unweighted objective).
    """

    c: float
    tolerance: float = 1e-4
    max_epochs: int = 1000
    seed: int = 0
    positive_weight: float = 1.0

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("c must be > 0")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


@dataclass(eq=False)
class LinearClassifier:
    """One class's binary scorer: score(x) = weights . x + bias."""

    class_id: int
    weights: np.ndarray
    bias: float
    c_used: float
    trained_in_state: int = 0
    # dual coefficients over [positives; negatives], kept for gap certificates;
    # absent on deserialized or hand-built classifiers (treated as alpha = 0)
    dual_coef: np.ndarray | None = field(default=None, repr=False)
    # per-epoch dual objective trace, populated only when training in debug mode
    dual_path: list[float] | None = field(default=None, repr=False)

    @property
    def dimension(self) -> int:
        return self.weights.shape[0]


@njit(cache=True, nogil=True)
def _cd_epoch(X, y, alpha, w, upper, qdiag, perm):
    """One coordinate sweep over `perm`; returns the max projected-gradient violation."""
    m = X.shape[1]
    max_viol = 0.0
    for k in range(perm.shape[0]):
        i = perm[k]
        g = 0.0
        for j in range(m):
            g += w[j] * X[i, j]
        g = y[i] * g - 1.0
        a = alpha[i]
        if a <= 0.0:
            pg = g if g < 0.0 else 0.0
        elif a >= upper[i]:
            pg = g if g > 0.0 else 0.0
        else:
            pg = g
        apg = abs(pg)
        if apg > max_viol:
            max_viol = apg
        if apg > 1e-12:
            anew = a - g / qdiag[i]
            if anew < 0.0:
                anew = 0.0
            elif anew > upper[i]:
                anew = upper[i]
            delta = (anew - a) * y[i]
            if delta != 0.0:
                for j in range(m):
                    w[j] += delta * X[i, j]
                alpha[i] = anew
    return max_viol


def _stack(positives: Sequence[np.ndarray] | np.ndarray,
           negatives: Sequence[np.ndarray] | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pos = np.asarray(positives, dtype=np.float64)
    neg = np.asarray(negatives, dtype=np.float64)
    if pos.size == 0:
        raise EmptyClassError("no positive examples")
    if neg.size == 0:
        raise EmptyClassError("no negative examples")
    pos = np.atleast_2d(pos)
    neg = np.atleast_2d(neg)
    if pos.shape[1] != neg.shape[1]:
        raise DimensionMismatchError(
            f"positives are {pos.shape[1]}-d, negatives {neg.shape[1]}-d")
    X = np.concatenate([pos, neg])
    y = np.concatenate([np.ones(pos.shape[0]), -np.ones(neg.shape[0])])
    return X, y


def _augment(X: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.hstack([X, np.ones((X.shape[0], 1))]))


def _upper_bounds(y: np.ndarray, config: SolverConfig) -> np.ndarray:
    upper = np.full(y.shape[0], config.c, dtype=np.float64)
    upper[y > 0] *= config.positive_weight
    return upper


def train_svm(positives, negatives, config: SolverConfig, *,
              class_id: int = 0, state: int = 0, debug: bool = False) -> LinearClassifier:
    """Train one binary linear classifier; deterministic given (inputs, config).

    Stops when the max projected-gradient violation of a sweep drops below
    config.tolerance, or after config.max_epochs sweeps.
    """
    X, y = _stack(positives, negatives)
    Xa = _augment(X)
    n = Xa.shape[0]
    alpha = np.zeros(n)
    w = np.zeros(Xa.shape[1])
    upper = _upper_bounds(y, config)
    qdiag = np.einsum("ij,ij->i", Xa, Xa)
    rng = np.random.default_rng(config.seed)
    dual_path: list[float] | None = [] if debug else None
    for _ in range(config.max_epochs):
        perm = rng.permutation(n)
        max_viol = _cd_epoch(Xa, y, alpha, w, upper, qdiag, perm)
        if debug:
            dual_path.append(0.5 * float(w @ w) - float(alpha.sum()))
        if max_viol < config.tolerance:
            break
    return LinearClassifier(
        class_id=class_id,
        weights=w[:-1].copy(),
        bias=float(w[-1]),
        c_used=config.c,
        trained_in_state=state,
        dual_coef=alpha,
        dual_path=dual_path,
    )


def score(classifier: LinearClassifier, x: np.ndarray) -> float:
    """weights . x + bias for a single vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != classifier.weights.shape:
        raise DimensionMismatchError(
            f"input is {x.shape[0] if x.ndim else 0}-d, "
            f"classifier expects {classifier.dimension}-d")
    return float(classifier.weights @ x + classifier.bias)


def score_batch(classifier: LinearClassifier, X: np.ndarray) -> np.ndarray:
    """Scores for every row of X."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != classifier.dimension:
        raise DimensionMismatchError(
            f"input rows are {X.shape[1]}-d, classifier expects {classifier.dimension}-d")
    return X @ classifier.weights + classifier.bias


def primal_objective(classifier: LinearClassifier, positives, negatives,
                     config: SolverConfig) -> float:
    """0.5*||w_aug||^2 + sum_i U_i * hinge_i at the classifier's weights."""
    X, y = _stack(positives, negatives)
    if X.shape[1] != classifier.dimension:
        raise DimensionMismatchError("data dimension differs from classifier")
    upper = _upper_bounds(y, config)
    margins = 1.0 - y * (X @ classifier.weights + classifier.bias)
    reg = 0.5 * (classifier.weights @ classifier.weights + classifier.bias ** 2)
    return float(reg + upper @ np.maximum(margins, 0.0))


def dual_objective(alpha: np.ndarray, positives, negatives) -> float:
    """sum(alpha) - 0.5*||w(alpha)||^2 with w(alpha) = sum_i alpha_i y_i x_aug_i."""
    X, y = _stack(positives, negatives)
    Xa = _augment(X)
    w = Xa.T @ (alpha * y)
    return float(alpha.sum() - 0.5 * w @ w)


def dual_gap(classifier: LinearClassifier, positives, negatives,
             config: SolverConfig) -> float:
    """Primal minus dual objective on the training data; >= 0 up to rounding.

    Uses the classifier's stored dual coefficients; a classifier without them
    (hand-built or deserialized) is certified against the feasible point
    alpha = 0, whose dual objective is 0.
    """
    X, y = _stack(positives, negatives)
    n = X.shape[0]
    alpha = classifier.dual_coef
    if alpha is None:
        alpha = np.zeros(n)
    if alpha.shape[0] != n:
        raise DimensionMismatchError(
            f"classifier was trained on {alpha.shape[0]} samples, got {n}")
    return primal_objective(classifier, positives, negatives, config) - \
        dual_objective(alpha, positives, negatives)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_classifiers(path: str | Path, classifiers: Sequence[LinearClassifier]) -> None:
    """Concatenated binary records, one per classifier (weights and bias as f64)."""
    with open(path, "wb") as fh:
        for clf in classifiers:
            d = clf.dimension
            fh.write(_CLF_HEADER.pack(CLF_MAGIC, d, clf.class_id,
                                      clf.trained_in_state, clf.c_used))
            payload = np.concatenate([clf.weights, [clf.bias]]).astype("<f8")
            fh.write(payload.tobytes())


def load_classifiers(path: str | Path) -> list[LinearClassifier]:
    blob = Path(path).read_bytes()
    out = []
    off = 0
    while off < len(blob):
        if len(blob) - off < _CLF_HEADER.size:
            raise FormatError(f"{path}: truncated classifier record at {off}")
        magic, d, class_id, state, c_used = _CLF_HEADER.unpack_from(blob, off)
        if magic != CLF_MAGIC:
            raise FormatError(f"{path}: bad classifier magic at offset {off}")
        off += _CLF_HEADER.size
        nbytes = (d + 1) * 8
        if len(blob) - off < nbytes:
            raise FormatError(f"{path}: truncated weights at offset {off}")
        payload = np.frombuffer(blob, dtype="<f8", count=d + 1, offset=off)
        off += nbytes
        out.append(LinearClassifier(
            class_id=class_id,
            weights=payload[:-1].copy(),
            bias=float(payload[-1]),
            c_used=float(c_used),
            trained_in_state=state,
        ))
    return out


def classifier_csv_line(clf: LinearClassifier) -> str:
    """One CSV line for eyeballing: class_id,state,c,bias,w0,...,w{d-1}."""
    values = [str(clf.class_id), str(clf.trained_in_state),
              repr(clf.c_used), repr(clf.bias)]
    values.extend(repr(float(v)) for v in clf.weights)
    return ",".join(values)
