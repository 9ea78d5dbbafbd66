"""Training toolkit for knowledge transfer from precomputed teacher embeddings.

A student classifier trains jointly on its task loss and a distance loss
(FitNet or distance correlation) against stored teacher embeddings,
optionally routed through a trainable embedding-compression module whose
own classification loss updates only the compression parameters.
"""

__version__ = "0.1.0"

from .autodiff import PARAM_TAGS, Parameter, Tape, Tensor
from .compression import CompressionModule
from .config import REGIMES, TASK_KINDS, TrainConfig
from .errors import (
    BatchTooSmallError,
    ConfigError,
    ContractError,
    DimensionError,
    EastError,
    NumericError,
    StoreFormatError,
    ValidationError,
)
from .losses import (
    DistanceLossKind,
    FitNetProjection,
    bce_with_logits,
    cross_entropy,
    dcor,
    dcor_loss,
    dcov2,
    fitnet_loss,
)
from .metrics import (
    MetricReport,
    accuracy,
    average_precision,
    mean_average_precision,
    multilabel_accuracy,
    overlap_eval,
)
from .store import (
    LabelSpace,
    Manifest,
    ManifestEntry,
    StoreMeta,
    make_batches,
    read_manifest,
    read_store,
    write_manifest,
    write_store,
)
from .student import LinearClassifier, StudentModel, sgd_step
from .synthetic import SyntheticDataset, SyntheticSpec, generate_synthetic
from .trainer import (
    Checkpoint,
    Models,
    StepReport,
    build_models,
    evaluate,
    load_models,
    run_experiment,
    train_step,
)

__all__ = [
    "__version__",
    "PARAM_TAGS", "Parameter", "Tape", "Tensor",
    "CompressionModule",
    "REGIMES", "TASK_KINDS", "TrainConfig",
    "EastError", "ValidationError", "DimensionError", "BatchTooSmallError",
    "ConfigError", "StoreFormatError", "ContractError", "NumericError",
    "DistanceLossKind", "FitNetProjection", "bce_with_logits", "cross_entropy",
    "dcor", "dcor_loss", "dcov2", "fitnet_loss",
    "MetricReport", "accuracy", "average_precision", "mean_average_precision",
    "multilabel_accuracy", "overlap_eval",
    "LabelSpace", "Manifest", "ManifestEntry", "StoreMeta", "make_batches",
    "read_manifest", "read_store", "write_manifest", "write_store",
    "LinearClassifier", "StudentModel", "sgd_step",
    "SyntheticDataset", "SyntheticSpec", "generate_synthetic",
    "Checkpoint", "Models", "StepReport", "build_models", "evaluate",
    "load_models", "run_experiment", "train_step",
]
