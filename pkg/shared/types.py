"""
Core data types for pddkit.
"""
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from shared.errors import DegenerateCell, EmptyMotif, InputError


# Fractional coordinates this close to 1.0 wrap to 0.0.
WRAP_EPS = 1e-12

# Smallest accepted cell volume relative to the product of the basis lengths.
FLAT_CELL_TOL = 1e-5


def wrap_fractional(frac: np.ndarray) -> np.ndarray:
    """Wrap fractional coordinates into [0, 1) with ``x - floor(x)``."""
    frac = np.asarray(frac, dtype=np.float64)
    wrapped = frac - np.floor(frac)
    wrapped[wrapped >= 1.0 - WRAP_EPS] = 0.0
    return wrapped


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class LatticeBasis:
    """
    Lattice basis; rows of ``matrix`` are v1, v2, v3 in Cartesian angstroms.
    """
    matrix: np.ndarray

    def __post_init__(self):
        matrix = _frozen(self.matrix)
        if matrix.shape != (3, 3) or not np.all(np.isfinite(matrix)):
            raise DegenerateCell(f"basis must be a finite 3x3 matrix, got shape {matrix.shape}")
        lengths = np.linalg.norm(matrix, axis=1)
        if np.any(lengths <= 0):
            raise DegenerateCell("basis vectors must have non-zero length")
        det = np.linalg.det(matrix)
        if det <= 0:
            raise DegenerateCell("basis must be right-handed with positive volume")
        if det <= FLAT_CELL_TOL * np.prod(lengths):
            raise DegenerateCell(
                f"basis is flat: volume {det:.3g} against edge product {np.prod(lengths):.3g}"
            )
        object.__setattr__(self, "matrix", matrix)

    @property
    def v1(self) -> np.ndarray:
        return self.matrix[0]

    @property
    def v2(self) -> np.ndarray:
        return self.matrix[1]

    @property
    def v3(self) -> np.ndarray:
        return self.matrix[2]

    @property
    def volume(self) -> float:
        return float(np.linalg.det(self.matrix))

    def to_list(self) -> List[List[float]]:
        return self.matrix.tolist()


@dataclass(frozen=True, eq=False)
class Motif:
    """
    Motif points in fractional coordinates with their atomic numbers.
    """
    frac_coords: np.ndarray
    species: np.ndarray

    def __post_init__(self):
        frac = np.asarray(self.frac_coords, dtype=np.float64)
        if frac.ndim != 2 or frac.shape[0] == 0:
            raise EmptyMotif("motif must contain at least one point")
        if frac.shape[1] != 3 or not np.all(np.isfinite(frac)):
            raise InputError(f"fractional coordinates must be finite (m, 3), got {frac.shape}")
        species = np.array(self.species, dtype=np.int64, copy=True)
        if species.shape != (frac.shape[0],):
            raise InputError(
                f"{frac.shape[0]} positions but {species.shape[0] if species.ndim else 0} species"
            )
        if np.any(species < 1) or np.any(species > 118):
            raise InputError("species must be atomic numbers in 1..118")
        species.setflags(write=False)
        object.__setattr__(self, "frac_coords", _frozen(wrap_fractional(frac)))
        object.__setattr__(self, "species", species)

    def __len__(self) -> int:
        return self.frac_coords.shape[0]


@dataclass(frozen=True, eq=False)
class PeriodicSet:
    """
    A periodic point set: lattice translates of a motif.
    """
    basis: LatticeBasis
    motif: Motif
    id: str = ""

    @property
    def m(self) -> int:
        return len(self.motif)

    def cartesian_positions(self) -> np.ndarray:
        """Cartesian coordinates of motif points, fractional row times basis."""
        return self.motif.frac_coords @ self.basis.matrix

    def density(self) -> float:
        return self.m / self.basis.volume

    def to_dict(self) -> dict:
        """Convert to dictionary for JSON serialization."""
        return {
            "id": self.id,
            "basis": self.basis.to_list(),
            "frac_coords": self.motif.frac_coords.tolist(),
            "species": self.motif.species.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PeriodicSet":
        """Create PeriodicSet from dictionary."""
        return cls(
            basis=LatticeBasis(np.array(data["basis"], dtype=np.float64)),
            motif=Motif(
                np.array(data["frac_coords"], dtype=np.float64),
                np.array(data["species"], dtype=np.int64),
            ),
            id=str(data.get("id", "")),
        )


@dataclass(frozen=True, eq=False)
class Isometry:
    """
    Orthogonal map followed by a Cartesian translation.
    """
    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rotation = _frozen(self.rotation)
        translation = _frozen(self.translation)
        if rotation.shape != (3, 3) or translation.shape != (3,):
            raise InputError("isometry needs a 3x3 rotation and a 3-vector translation")
        if not np.allclose(rotation.T @ rotation, np.eye(3), rtol=0.0, atol=1e-12):
            raise InputError("rotation matrix is not orthogonal")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @property
    def is_reflection(self) -> bool:
        return bool(np.linalg.det(self.rotation) < 0)


@dataclass(frozen=True, eq=False)
class Pdd:
    """
    Pointwise distance distribution: weighted rows of sorted neighbour distances.
    """
    weights: np.ndarray
    rows: np.ndarray
    k: int
    tolerance: float
    species: Optional[np.ndarray] = None
    source_id: str = ""

    def __post_init__(self):
        weights = _frozen(self.weights)
        rows = _frozen(self.rows)
        if rows.ndim != 2 or rows.shape[0] == 0 or rows.shape[1] != self.k:
            raise InputError(f"PDD rows must have shape (r, {self.k}), got {rows.shape}")
        if weights.shape != (rows.shape[0],):
            raise InputError("PDD needs one weight per row")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise InputError("PDD weights must be positive and sum to 1")
        if not np.all(np.isfinite(rows)) or np.any(rows <= 0):
            raise InputError("PDD distances must be finite and positive")
        if np.any(np.diff(rows, axis=1) < -1e-12):
            raise InputError("PDD rows must be non-decreasing")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "rows", rows)
        if self.species is not None:
            species = np.array(self.species, dtype=np.int64, copy=True)
            if species.shape != weights.shape:
                raise InputError("PDD species must have one entry per row")
            species.setflags(write=False)
            object.__setattr__(self, "species", species)

    @property
    def r(self) -> int:
        return self.rows.shape[0]

    def matrix(self) -> np.ndarray:
        """Weights as the first column followed by the distances."""
        return np.column_stack([self.weights, self.rows])

    def to_dict(self) -> dict:
        """Convert to dictionary for JSON serialization."""
        return {
            "id": self.source_id,
            "k": int(self.k),
            "tolerance": float(self.tolerance),
            "weights": self.weights.tolist(),
            "rows": self.rows.tolist(),
            "species": None if self.species is None else self.species.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Pdd":
        """Create Pdd from dictionary."""
        species = data.get("species")
        return cls(
            weights=np.array(data["weights"], dtype=np.float64),
            rows=np.array(data["rows"], dtype=np.float64).reshape(-1, int(data["k"])),
            k=int(data["k"]),
            tolerance=float(data["tolerance"]),
            species=None if species is None else np.array(species, dtype=np.int64),
            source_id=str(data.get("id", "")),
        )


@dataclass(frozen=True, eq=False)
class Amd:
    """Average minimum distance: weighted column means of a PDD."""
    values: np.ndarray
    k: int
    source_id: str = ""

    def to_dict(self) -> dict:
        return {"id": self.source_id, "k": int(self.k), "values": list(map(float, self.values))}


@dataclass(frozen=True)
class TransportPlan:
    """
    Optimal flow between the rows of two PDDs.
    """
    flows: Tuple[Tuple[int, int, float], ...]
    cost: float

    def outflow(self, n_sources: int) -> np.ndarray:
        out = np.zeros(n_sources)
        for i, _, mass in self.flows:
            out[i] += mass
        return out

    def inflow(self, n_sinks: int) -> np.ndarray:
        inflow = np.zeros(n_sinks)
        for _, j, mass in self.flows:
            inflow[j] += mass
        return inflow

    def to_dict(self) -> dict:
        return {
            "cost": self.cost,
            "flows": [{"source": i, "sink": j, "mass": mass} for i, j, mass in self.flows],
        }


class EmdResult(NamedTuple):
    """Earth mover's distance and the plan that attains it."""
    cost: float
    plan: TransportPlan


@dataclass(frozen=True, eq=False)
class Embedding:
    """
    Low-dimensional coordinates from multidimensional scaling.
    """
    coords: np.ndarray
    stress: float
    labels: Tuple[str, ...]

    @property
    def dims(self) -> int:
        return self.coords.shape[1]


class EncodingMode(str, Enum):
    """Which inputs form the initial row embedding."""
    FULL = "full"
    STRUCTURE = "structure"
    COMPOSITION = "composition"


class PstConfig(BaseModel):
    """
    Architecture hyper-parameters of the Periodic Set Transformer.

    Defaults: width 128 split over 4 heads, 4 encoders, attention dropout
    0.1, k = 15 and collapse tol 1e-4.
    """
    model_config = ConfigDict(extra="forbid")

    d_model: int = Field(128, ge=1)
    heads: int = Field(4, ge=1)
    encoders: int = Field(4, ge=1)
    attention_dropout: float = Field(0.1, ge=0.0, lt=1.0)
    dropout: float = Field(0.0, ge=0.0, lt=1.0)
    k: int = Field(15, ge=1)
    species_dim: int = Field(118, ge=1)
    seed: int = 0
    collapse_tol: float = Field(1e-4, ge=0.0)
    species_aware: bool = True
    encoding: EncodingMode = EncodingMode.FULL
    weighted_attention: bool = True
    weighted_pooling: bool = True

    @model_validator(mode="after")
    def _check_heads(self) -> "PstConfig":
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        return self

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads


class TrainOpts(BaseModel):
    """
    Optimiser and schedule options for training.
    """
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(250, ge=1)
    batch_size: Optional[int] = Field(None, ge=1)
    lr: float = Field(1e-3, gt=0.0)
    min_lr: float = Field(0.0, ge=0.0)
    weight_decay: float = Field(1e-5, ge=0.0)
    val_fraction: float = Field(0.1, ge=0.0, lt=1.0)
    shift_targets: bool = False
    seed: int = 0

    def resolved_batch_size(self, n: int) -> int:
        """32 for fewer than 5000 structures, 64 otherwise, unless set."""
        if self.batch_size is not None:
            return self.batch_size
        return 32 if n < 5000 else 64


class FileDigest(BaseModel):
    path: str
    sha256: str


class RunManifest(BaseModel):
    """
    Record of one CLI invocation: what went in, what came out, how long it took.
    """
    command: str
    config: Dict[str, Any] = Field(default_factory=dict)
    inputs: List[FileDigest] = Field(default_factory=list)
    outputs: List[FileDigest] = Field(default_factory=list)
    version: str
    seed: Optional[int] = None
    timings: Dict[str, float] = Field(default_factory=dict)
    started_at: str = Field(default_factory=lambda: datetime.now(timezone.utc).isoformat())


@dataclass
class PddkitSettings:
    """
    Process-level settings read from the environment.
    """
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    max_supercell_points: int = 100_000
    k: int = 15
    tolerance: float = 1e-4
    out_root: str = "runs"
    embeddings: Optional[str] = None
    http_timeout: float = 30.0

    @classmethod
    def from_env(cls, env_dict: dict) -> "PddkitSettings":
        """Create settings from environment variables."""
        return cls(
            threads=int(env_dict.get("PDDKIT_THREADS", os.cpu_count() or 1)),
            max_supercell_points=int(env_dict.get("PDDKIT_MAX_SUPERCELL_POINTS", "100000")),
            k=int(env_dict.get("PDDKIT_K", "15")),
            tolerance=float(env_dict.get("PDDKIT_TOL", "1e-4")),
            out_root=env_dict.get("PDDKIT_OUT_ROOT", "runs"),
            embeddings=env_dict.get("PDDKIT_EMBEDDINGS") or None,
            http_timeout=float(env_dict.get("PDDKIT_HTTP_TIMEOUT", "30")),
        )
