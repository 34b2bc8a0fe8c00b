"""Objective, optimiser, checkpoints and the training loop."""

from .checkpoint import Checkpoint, load_checkpoint, read_checkpoint, save_checkpoint
from .loop import LOG_HEADER, TrainingError, TrainResult, train, write_log
from .objective import AdamW, LossParts, TrainConfig, lr_at, total_loss

__all__ = [
    "AdamW", "Checkpoint", "LOG_HEADER", "LossParts", "TrainConfig", "TrainResult",
    "TrainingError", "load_checkpoint", "lr_at", "read_checkpoint", "save_checkpoint",
    "total_loss", "train", "write_log",
]
