"""Configuration, training, evaluation, checkpoints and the CLI."""

from vsformer.trainer.checkpoint import (
    ChecksumError,
    CheckpointError,
    ModelCheckpoint,
    VersionMismatchError,
    load_checkpoint,
    save_checkpoint,
)
from vsformer.trainer.config import TrainConfig
from vsformer.trainer.explain import explain
from vsformer.trainer.metrics import MetricsReport, accuracy, binary_auc, macro_auc
from vsformer.trainer.training import TrainingDivergedError, ablate, evaluate, predict, train

__all__ = [
    "CheckpointError",
    "ChecksumError",
    "MetricsReport",
    "ModelCheckpoint",
    "TrainConfig",
    "TrainingDivergedError",
    "VersionMismatchError",
    "ablate",
    "accuracy",
    "binary_auc",
    "evaluate",
    "explain",
    "load_checkpoint",
    "macro_auc",
    "predict",
    "save_checkpoint",
    "train",
]
