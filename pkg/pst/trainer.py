"""
Training, prediction and checkpoints for the Periodic Set Transformer.
"""
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import structlog
import torch
from pydantic import BaseModel, ValidationError

from shared import __version__
from shared.errors import EmptyDataset, InputError, NonFiniteLoss
from shared.types import PstConfig, TrainOpts
from pst.data import ColumnStats, DatasetRecord, collate, column_stats, split_indices
from pst.model import DTYPE, PeriodicSetTransformer, checksum


logger = structlog.get_logger()


@dataclass
class EpochStats:
    epoch: int
    train_mae: float
    val_mae: float
    lr: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_mae": self.train_mae,
            "val_mae": self.val_mae,
            "lr": self.lr,
        }


@dataclass
class TrainedModel:
    """A model with the preprocessing needed to apply it to new structures."""
    model: PeriodicSetTransformer
    stats: ColumnStats
    target_shift: float = 0.0

    @property
    def config(self) -> PstConfig:
        return self.model.config

    def predict(self, records: Sequence[DatasetRecord], batch_size: int = 64) -> np.ndarray:
        """
        Predictions in target units (normalization applied, mean shift undone).
        """
        if not records:
            return np.zeros(0)
        self.model.eval()
        out = []
        with torch.no_grad():
            for start in range(0, len(records), batch_size):
                batch = collate(records[start:start + batch_size], self.stats)
                predictions, _ = self.model(batch.rows, batch.weights, batch.species)
                out.append(predictions.numpy() + self.target_shift)
        return np.concatenate(out)

    def checksum(self) -> str:
        return checksum(self.model)


@dataclass
class TrainResult:
    trained: TrainedModel
    history: List[EpochStats] = field(default_factory=list)
    train_ids: List[str] = field(default_factory=list)
    val_ids: List[str] = field(default_factory=list)
    seconds: float = 0.0


def mae(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Mean absolute error."""
    return float(np.mean(np.abs(np.asarray(predictions) - np.asarray(targets))))


def mape(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Mean absolute percentage error over non-zero targets, in percent."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    nonzero = targets != 0
    if not nonzero.any():
        raise InputError("MAPE is undefined when every target is zero")
    return float(100.0 * np.mean(np.abs((predictions[nonzero] - targets[nonzero]) / targets[nonzero])))


def _evaluate(trained: TrainedModel, records: Sequence[DatasetRecord], batch_size: int) -> float:
    if not records:
        return float("nan")
    predictions = trained.predict(records, batch_size)
    return mae(predictions, [r.target for r in records])


def train(records: Sequence[DatasetRecord], config: PstConfig, opts: TrainOpts) -> TrainResult:
    """
    Fit a Periodic Set Transformer by minimizing MAE.

    AdamW with cosine learning-rate decay over ``opts.epochs``; batches of 32
    (64 from 5000 training structures) unless ``opts.batch_size`` is set.
    Column statistics and the optional target mean shift come from the
    training split only. Every random choice draws from ``opts.seed`` or
    ``config.seed``, so equal seeds give bitwise-equal parameters.

    Args:
        records: Structures with targets.
        config: Architecture.
        opts: Optimizer and schedule options.

    Returns:
        TrainResult with the model, per-epoch history and the split.

    Raises:
        EmptyDataset: If ``records`` is empty.
        NonFiniteLoss: If a batch loss becomes NaN or inf.
    """
    if not records:
        raise EmptyDataset("no structures to train on")
    if any(r.target is None or not np.isfinite(r.target) for r in records):
        raise InputError("every training record needs a finite target")
    started = time.perf_counter()

    train_idx, val_idx = split_indices(len(records), opts.val_fraction, opts.seed)
    train_set = [records[i] for i in train_idx]
    val_set = [records[i] for i in val_idx]

    stats = column_stats([r.pdd for r in train_set])
    shift = float(np.mean([r.target for r in train_set])) if opts.shift_targets else 0.0
    model = PeriodicSetTransformer(config)
    trained = TrainedModel(model=model, stats=stats, target_shift=shift)

    optimizer = torch.optim.AdamW(model.parameters(), lr=opts.lr, weight_decay=opts.weight_decay)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=opts.epochs, eta_min=opts.min_lr
    )
    batch_size = opts.resolved_batch_size(len(train_set))
    rng = np.random.default_rng(opts.seed)
    generator = torch.Generator().manual_seed(config.seed)

    logger.info("Starting training", structures=len(records), train=len(train_set),
                val=len(val_set), batch_size=batch_size, epochs=opts.epochs,
                shift_targets=opts.shift_targets)

    history = []
    for epoch in range(opts.epochs):
        model.train()
        order = rng.permutation(len(train_set))
        lr = optimizer.param_groups[0]["lr"]
        total = 0.0
        for batch_index, start in enumerate(range(0, len(order), batch_size)):
            batch = collate([train_set[i] for i in order[start:start + batch_size]], stats)
            predictions, _ = model(batch.rows, batch.weights, batch.species, generator)
            loss = (predictions - (batch.targets - shift)).abs().mean()
            if not torch.isfinite(loss):
                raise NonFiniteLoss(epoch, batch_index)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss) * len(batch.ids)
        scheduler.step()

        stats_row = EpochStats(
            epoch=epoch + 1,
            train_mae=total / len(train_set),
            val_mae=_evaluate(trained, val_set, batch_size),
            lr=lr,
        )
        history.append(stats_row)
        logger.debug("Epoch finished", **stats_row.to_dict())

    seconds = time.perf_counter() - started
    logger.info("Training finished", epochs=opts.epochs, seconds=round(seconds, 3),
                train_mae=history[-1].train_mae, val_mae=history[-1].val_mae,
                checksum=trained.checksum())
    return TrainResult(
        trained=trained,
        history=history,
        train_ids=[r.id for r in train_set],
        val_ids=[r.id for r in val_set],
        seconds=seconds,
    )


def predict(trained: TrainedModel, records: Sequence[DatasetRecord]) -> Dict[str, float]:
    """Prediction per structure id."""
    return dict(zip((r.id for r in records), map(float, trained.predict(records))))


class Checkpoint(BaseModel):
    """
    JSON checkpoint: configuration, float64 tensors in row-major order,
    column statistics and target shift.
    """
    version: str
    config: PstConfig
    tensors: Dict[str, List[float]]
    shapes: Dict[str, List[int]]
    column_min: List[float]
    column_max: List[float]
    target_shift: float = 0.0
    embeddings: Optional[str] = None


def save_checkpoint(
    trained: TrainedModel, path: Union[str, Path], embeddings: Optional[str] = None
) -> Path:
    state = trained.model.state_dict()
    checkpoint = Checkpoint(
        version=__version__,
        config=trained.config,
        tensors={name: t.detach().reshape(-1).tolist() for name, t in state.items()},
        shapes={name: list(t.shape) for name, t in state.items()},
        column_min=list(trained.stats.minimum),
        column_max=list(trained.stats.maximum),
        target_shift=trained.target_shift,
        embeddings=embeddings,
    )
    path = Path(path)
    path.write_text(checkpoint.model_dump_json(indent=1) + "\n", encoding="utf-8")
    logger.info("Saved checkpoint", path=str(path), checksum=trained.checksum())
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Parse and validate a checkpoint file."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return Checkpoint.model_validate(data)
    except (OSError, ValueError) as e:
        if isinstance(e, ValidationError):
            raise InputError(f"invalid checkpoint {path}: {e}") from e
        raise InputError(f"cannot read checkpoint {path}: {e}") from e


def restore(checkpoint: Checkpoint) -> TrainedModel:
    """Rebuild the model described by a checkpoint."""
    model = PeriodicSetTransformer(checkpoint.config)
    state = {}
    for name, values in checkpoint.tensors.items():
        shape = checkpoint.shapes.get(name)
        if shape is None:
            raise InputError(f"checkpoint has no shape for tensor {name}")
        state[name] = torch.tensor(values, dtype=DTYPE).reshape(shape)
    try:
        model.load_state_dict(state)
    except RuntimeError as e:
        raise InputError(f"checkpoint tensors do not match the configuration: {e}") from e
    stats = ColumnStats(minimum=tuple(checkpoint.column_min), maximum=tuple(checkpoint.column_max))
    return TrainedModel(model=model, stats=stats, target_shift=checkpoint.target_shift)


def history_frame(history: Sequence[EpochStats]) -> pd.DataFrame:
    return pd.DataFrame([h.to_dict() for h in history], columns=["epoch", "train_mae", "val_mae", "lr"])
