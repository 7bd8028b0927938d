"""
Classical (Torgerson) multidimensional scaling of distance matrices.
"""
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
import structlog
from scipy.linalg import eigh
from scipy.spatial.distance import pdist, squareform

from shared.errors import InputError, NegativeDistance, NotSymmetric
from shared.types import Embedding


logger = structlog.get_logger()

SYMMETRY_TOL = 1e-9

# Eigenvalues at or below this carry no axis.
EIGEN_FLOOR = 1e-9


def _validate(distances: np.ndarray) -> np.ndarray:
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape[0] == 0:
        raise InputError(f"distance matrix must be square and non-empty, got shape {d.shape}")
    if not np.all(np.isfinite(d)):
        raise InputError("distance matrix has non-finite entries")
    if np.abs(d - d.T).max() > SYMMETRY_TOL:
        raise NotSymmetric("distance matrix is not symmetric")
    if np.abs(np.diag(d)).max() > SYMMETRY_TOL:
        raise NotSymmetric("distance matrix has a non-zero diagonal")
    if d.min() < 0:
        raise NegativeDistance(f"distance matrix has a negative entry {d.min():g}")
    return d


def stress(distances: np.ndarray, coords: np.ndarray) -> float:
    """Normalized residual sqrt(sum (d - d_hat)^2 / sum d^2) over pairs."""
    d = squareform(np.asarray(distances, dtype=np.float64), checks=False)
    d_hat = pdist(coords)
    total = float(np.sum(d ** 2))
    if total == 0.0:
        return float(np.sqrt(np.sum(d_hat ** 2)))
    return float(np.sqrt(np.sum((d - d_hat) ** 2) / total))


def classical_mds(
    distances: np.ndarray,
    dims: int = 2,
    labels: Optional[Sequence[str]] = None,
) -> Embedding:
    """
    Embed a distance matrix in 2 or 3 dimensions.

    The doubly centred matrix ``B = -J D^2 J / 2`` is diagonalized; the top
    ``dims`` eigenvectors scaled by the root of their eigenvalues are the
    coordinates. Axes whose eigenvalue is not positive are zero. Each axis is
    flipped so its largest-magnitude entry is positive.

    Args:
        distances: Symmetric (n, n) matrix with zero diagonal.
        dims: 2 or 3.
        labels: Ids of the n points.

    Returns:
        Embedding with centred coordinates and the stress of the fit.

    Raises:
        NotSymmetric: If the matrix is asymmetric or has a non-zero diagonal.
        NegativeDistance: If any entry is negative.
    """
    if dims not in (2, 3):
        raise InputError(f"dims must be 2 or 3, got {dims}")
    d = _validate(distances)
    n = d.shape[0]
    labels = tuple(str(x) for x in labels) if labels is not None else tuple(str(i) for i in range(n))
    if len(labels) != n:
        raise InputError(f"{len(labels)} labels for {n} points")

    j = np.eye(n) - np.full((n, n), 1.0 / n)
    b = -0.5 * j @ (d ** 2) @ j
    b = 0.5 * (b + b.T)
    values, vectors = eigh(b)
    order = np.argsort(values)[::-1][:dims]

    coords = np.zeros((n, dims))
    for axis, idx in enumerate(order):
        if values[idx] <= EIGEN_FLOOR:
            continue
        column = vectors[:, idx] * np.sqrt(values[idx])
        if column[np.argmax(np.abs(column))] < 0:
            column = -column
        coords[:, axis] = column

    result = Embedding(coords=coords, stress=stress(d, coords), labels=labels)
    logger.info("Computed MDS embedding", points=n, dims=dims, stress=result.stress)
    return result


def write_embedding(embedding: Embedding, path: Union[str, Path]) -> Path:
    """CSV ``id,x,y[,z]`` preceded by a ``# stress`` comment line."""
    path = Path(path)
    frame = pd.DataFrame(embedding.coords, columns=["x", "y", "z"][: embedding.dims])
    frame.insert(0, "id", list(embedding.labels))
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        handle.write(f"# stress {embedding.stress:.17g}\n")
        frame.to_csv(handle, index=False, float_format="%.17g", lineterminator="\n")
    return path


def read_embedding(path: Union[str, Path]) -> Embedding:
    """Inverse of ``write_embedding``."""
    path = Path(path)
    with path.open(encoding="utf-8") as handle:
        header = handle.readline().split()
    if len(header) != 3 or header[:2] != ["#", "stress"]:
        raise InputError(f"{path} has no stress line")
    frame = pd.read_csv(path, comment="#", dtype={"id": str}, float_precision="round_trip")
    coords = frame.drop(columns="id").to_numpy(dtype=np.float64)
    return Embedding(coords=coords, stress=float(header[2]), labels=tuple(frame["id"]))
