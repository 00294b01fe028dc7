"""Trainable 3D convolutional regressor for amplitude vectors."""
from .checkpoint import ModelCheckpoint
from .evaluation import EvalReport, evaluate
from .network import ArchitectureSpec, Regressor
from .training import Adam, EpochLog, TrainConfig, TrainResult, train, write_log_csv

__all__ = [
    "Adam",
    "ArchitectureSpec",
    "EpochLog",
    "EvalReport",
    "ModelCheckpoint",
    "Regressor",
    "TrainConfig",
    "TrainResult",
    "evaluate",
    "train",
    "write_log_csv",
]
