"""Incremental image classification over precomputed features.

Per-class binary linear classifiers are trained against a shared, bounded pool
of negative features; new class batches extend the system without touching the
classifiers already learned. See README.md for a tour.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DimensionMismatchError,
    DuplicateClassError,
    EmptyClassError,
    EmptyInputError,
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
from .features import (
    ClassFeatures,
    EvalSet,
    LabeledDataset,
    l2_normalize,
    load_dataset,
    load_eval_set,
    pooled_validation,
    write_dataset,
    write_eval_set,
)
from .svm import (
    LinearClassifier,
    SolverConfig,
    dual_gap,
    score,
    train_svm,
)
from .memory import (
    NegativeMemory,
    Quota,
    compute_quota,
    diversify_classes,
    greedy_diversify,
    negatives_for_class,
    select_div,
    select_ind,
    select_rand,
)
from .engine import (
    BatchPlan,
    IncrementalState,
    advance_state,
    initial_state,
    load_checkpoint,
    predict_topk,
    run_protocol,
    save_checkpoint,
)
from .evaluation import (
    DEFAULT_C_GRID,
    EvalReport,
    ExperimentConfig,
    emit_report,
    generate_synthetic,
    grid_search_c,
    topk_accuracy,
)
