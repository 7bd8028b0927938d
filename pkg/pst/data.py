"""
Dataset preparation: PDD records, column normalization and padded batches.
"""
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog
import torch

from crystal.pdd import pdd
from shared.embeddings import EmbeddingTable, embedding_dim, species_matrix
from shared.errors import InputError, KMismatch, MissingTargets, ShapeMismatch
from shared.types import EncodingMode, Pdd, PeriodicSet, PstConfig
from pst.model import DTYPE


logger = structlog.get_logger()

# Columns whose span is within this fraction of their magnitude count as
# constant: lattice-period distances repeat in every row up to rounding.
CONSTANT_SPAN_TOL = 1e-9


@dataclass(frozen=True)
class ColumnStats:
    """Per-column minimum and maximum of PDD distances over a training set."""
    minimum: Tuple[float, ...]
    maximum: Tuple[float, ...]

    @property
    def k(self) -> int:
        return len(self.minimum)

    def apply(self, rows: np.ndarray) -> np.ndarray:
        """Map each column to [0, 1]; constant columns map to 0."""
        rows = np.asarray(rows, dtype=np.float64)
        if rows.shape[-1] != self.k:
            raise KMismatch(self.k, rows.shape[-1])
        low = np.array(self.minimum)
        high = np.array(self.maximum)
        span = high - low
        varies = span > CONSTANT_SPAN_TOL * np.maximum(1.0, np.abs(high))
        safe = np.where(varies, span, 1.0)
        return np.where(varies, (rows - low) / safe, 0.0)

    def to_dict(self) -> dict:
        return {"min": list(self.minimum), "max": list(self.maximum)}

    @classmethod
    def from_dict(cls, data: dict) -> "ColumnStats":
        return cls(minimum=tuple(map(float, data["min"])), maximum=tuple(map(float, data["max"])))


def column_stats(pdds: Sequence[Pdd]) -> ColumnStats:
    if not pdds:
        raise InputError("cannot compute column statistics of no PDDs")
    k = pdds[0].k
    for p in pdds:
        if p.k != k:
            raise KMismatch(k, p.k)
    stacked = np.concatenate([p.rows for p in pdds], axis=0)
    return ColumnStats(
        minimum=tuple(map(float, stacked.min(axis=0))),
        maximum=tuple(map(float, stacked.max(axis=0))),
    )


def normalize_columns(pdds: Sequence[Pdd]) -> Tuple[List[np.ndarray], ColumnStats]:
    """
    Scale every distance column to [0, 1] over the whole collection.

    Returns:
        Normalized row matrices (one per Pdd) and the stats used.
    """
    stats = column_stats(pdds)
    return [stats.apply(p.rows) for p in pdds], stats


@dataclass(frozen=True, eq=False)
class DatasetRecord:
    """One structure ready for the model: its PDD, species rows and target."""
    id: str
    pdd: Pdd
    species: np.ndarray
    target: Optional[float] = None


def build_dataset(
    sets: Sequence[PeriodicSet],
    config: PstConfig,
    targets: Optional[Mapping[str, float]] = None,
    table: Optional[EmbeddingTable] = None,
    max_points: Optional[int] = None,
) -> List[DatasetRecord]:
    """
    Compute PDDs and species embeddings for a list of structures.

    Args:
        sets: Structures; their ids key into ``targets``.
        config: Model configuration (k, collapse tolerance, species handling).
        targets: Target value per structure id, or None for prediction.
        table: Species embedding table, or None for one-hot.
        max_points: Point budget of each neighbour search.

    Raises:
        MissingTargets: If targets are given but some ids lack one.
        ShapeMismatch: If the embedding width differs from ``config.species_dim``.
    """
    if config.encoding != EncodingMode.STRUCTURE:
        if not config.species_aware:
            raise InputError(f"encoding {config.encoding.value!r} needs species-aware collapse")
        if embedding_dim(table) != config.species_dim:
            raise ShapeMismatch(
                f"embedding width {embedding_dim(table)} != species_dim {config.species_dim}"
            )
    if targets is not None:
        missing = [s.id for s in sets if s.id not in targets]
        if missing:
            raise MissingTargets(missing)

    records = []
    for pset in sets:
        p = pdd(pset, config.k, config.collapse_tol, config.species_aware, max_points)
        if config.encoding == EncodingMode.STRUCTURE:
            species = np.zeros((p.r, config.species_dim))
        else:
            species = species_matrix(p.species, table)
        target = None if targets is None else float(targets[pset.id])
        records.append(DatasetRecord(id=pset.id, pdd=p, species=species, target=target))
    logger.info("Built dataset", structures=len(records), k=config.k,
                tolerance=config.collapse_tol, encoding=config.encoding.value)
    return records


@dataclass
class Batch:
    rows: torch.Tensor
    weights: torch.Tensor
    species: torch.Tensor
    targets: Optional[torch.Tensor]
    ids: List[str]


def collate(records: Sequence[DatasetRecord], stats: ColumnStats) -> Batch:
    """
    Stack records into padded tensors; padding rows have zero weight and content.
    """
    if not records:
        raise InputError("cannot batch zero records")
    size = max(r.pdd.r for r in records)
    k = stats.k
    species_dim = records[0].species.shape[1]
    rows = np.zeros((len(records), size, k))
    weights = np.zeros((len(records), size))
    species = np.zeros((len(records), size, species_dim))
    for b, record in enumerate(records):
        r = record.pdd.r
        rows[b, :r] = stats.apply(record.pdd.rows)
        weights[b, :r] = record.pdd.weights
        species[b, :r] = record.species

    targets = None
    if all(r.target is not None for r in records):
        targets = torch.tensor([r.target for r in records], dtype=DTYPE)
    return Batch(
        rows=torch.from_numpy(rows).to(DTYPE),
        weights=torch.from_numpy(weights).to(DTYPE),
        species=torch.from_numpy(species).to(DTYPE),
        targets=targets,
        ids=[r.id for r in records],
    )


def split_indices(n: int, val_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded train/validation split; at least one training index is kept."""
    order = np.random.default_rng(seed).permutation(n)
    n_val = min(int(round(n * val_fraction)), n - 1)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def read_targets(path: str) -> Dict[str, float]:
    """Targets CSV with columns ``id,value``."""
    try:
        frame = pd.read_csv(path, dtype={"id": str}, float_precision="round_trip")
    except (OSError, ValueError) as e:
        raise InputError(f"cannot read targets {path}: {e}") from e
    if not {"id", "value"} <= set(frame.columns):
        raise InputError(f"targets file {path} needs 'id' and 'value' columns")
    values = frame["value"].to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise InputError(f"targets file {path} holds non-finite values")
    return dict(zip(frame["id"].astype(str), map(float, values)))
