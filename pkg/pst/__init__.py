"""Periodic Set Transformer: model, dataset preparation and training."""

from pst.model import PeriodicSetTransformer, backward, weighted_softmax
from pst.data import DatasetRecord, build_dataset, normalize_columns
from pst.trainer import TrainedModel, load_checkpoint, restore, save_checkpoint, train

__all__ = [
    "PeriodicSetTransformer",
    "backward",
    "weighted_softmax",
    "DatasetRecord",
    "build_dataset",
    "normalize_columns",
    "TrainedModel",
    "load_checkpoint",
    "restore",
    "save_checkpoint",
    "train",
]
