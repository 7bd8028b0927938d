"""
Pointwise distance distributions of periodic sets.

The PDD of a set lists, for every motif point, the sorted distances to its k
nearest neighbours in the infinite set. Rows closer than a tolerance (L-inf)
are merged into one row carrying the summed weight, and the result is sorted
lexicographically.
"""
import functools
import json
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import structlog
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist, pdist, squareform

from crystal.geometry import (
    DEFAULT_MAX_SUPERCELL_POINTS,
    cell_diameter,
    covering_radius_upper_bound,
    minimal_interplane_spacing,
)
from shared.errors import InputError, SupercellOverflow
from shared.types import Amd, Pdd, PeriodicSet


logger = structlog.get_logger()

DEFAULT_K = 15
DEFAULT_TOLERANCE = 1e-4

# Rows this close are equal even at tolerance 0 (replicas of one point
# computed through different translates differ by rounding only).
COLLAPSE_NOISE = 1e-11

# Entries closer than this compare equal when ordering rows.
ORDER_TIE_BAND = 1e-9

# Upper limit on distance-matrix entries evaluated at once.
_CHUNK_ENTRIES = 1 << 22


def _shell(s: int) -> np.ndarray:
    """Integer vectors n with max|n_i| == s."""
    r = np.arange(-s, s + 1)
    grid = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    return grid[np.abs(grid).max(axis=1) == s]


def knn_distances(pset: PeriodicSet, k: int, max_points: Optional[int] = None) -> np.ndarray:
    """
    Distances from each motif point to its k nearest neighbours in the infinite set.

    Lattice translates are visited shell by shell (max-norm of the integer
    coordinates). After shell s every unvisited point is at least
    ``(s + 1) * spacing - diameter`` away from any motif point, so a row is
    final once its k-th distance is within that bound.

    Args:
        pset: Periodic set.
        k: Number of neighbours.
        max_points: Upper limit on the points of the searched block of cells.

    Returns:
        (m, k) array; row i is non-decreasing and excludes point i itself.

    Raises:
        SupercellOverflow: If the search would need more than ``max_points`` points.
    """
    if k < 1:
        raise InputError(f"k must be at least 1, got {k}")
    basis = pset.basis.matrix
    cart = pset.cartesian_positions()
    m = pset.m
    spacing = minimal_interplane_spacing(pset.basis)
    diameter = cell_diameter(pset.basis)

    limit = DEFAULT_MAX_SUPERCELL_POINTS if max_points is None else max_points

    best = np.full((m, k), np.inf)
    active = np.arange(m)
    s = 0
    while active.size:
        searched = m * (2 * s + 1) ** 3
        if searched > limit:
            raise SupercellOverflow(searched, limit)
        translates = _shell(s) @ basis
        candidates = (cart[None, :, :] + translates[:, None, :]).reshape(-1, 3)
        step = max(1, _CHUNK_ENTRIES // len(candidates))
        for start in range(0, active.size, step):
            rows = active[start:start + step]
            dists = cdist(cart[rows], candidates)
            if s == 0:
                dists[np.arange(len(rows)), rows] = np.inf
            merged = np.concatenate([best[rows], dists], axis=1)
            if merged.shape[1] > k:
                merged = np.partition(merged, k - 1, axis=1)[:, :k]
            best[rows] = np.sort(merged, axis=1)
        bound = (s + 1) * spacing - diameter
        active = active[~(best[active, -1] <= bound)]
        s += 1

    logger.debug("Computed neighbour distances", source_id=pset.id, m=m, k=k, shells=s)
    return best


def _partition(
    distances: np.ndarray,
    tolerance: float,
    species: Optional[np.ndarray],
) -> np.ndarray:
    """Single-linkage group label per row: rows within tolerance (L-inf) and of equal species."""
    m = distances.shape[0]
    if m == 1:
        return np.zeros(1, dtype=np.int64)
    linked = pdist(distances, metric="chebyshev") <= max(tolerance, COLLAPSE_NOISE)
    if species is not None:
        linked &= pdist(species[:, None].astype(np.float64), metric="cityblock") == 0
    _, labels = connected_components(csr_matrix(squareform(linked)), directed=False)
    return labels


def _canonical(labels: np.ndarray) -> tuple:
    """Relabel groups by order of first appearance so equal partitions compare equal."""
    mapping: Dict[int, int] = {}
    return tuple(mapping.setdefault(int(label), len(mapping)) for label in labels)


def collapse_rows(
    distances: np.ndarray,
    tolerance: float,
    species: Optional[Sequence[int]] = None,
    source_id: str = "",
    weights: Optional[np.ndarray] = None,
) -> Pdd:
    """
    Merge close rows of an uncollapsed distance matrix and sort the result.

    Args:
        distances: (m, k) neighbour distances, one row per motif point.
        tolerance: L-inf distance under which rows merge (single linkage).
        species: Atomic number per row; rows of different species never merge.
        source_id: Id recorded on the Pdd.
        weights: Row weights; uniform 1/m when omitted.

    Returns:
        The collapsed, lexicographically ordered Pdd.
    """
    distances = np.asarray(distances, dtype=np.float64)
    if distances.ndim != 2 or distances.shape[0] == 0:
        raise InputError(f"expected a non-empty (m, k) matrix, got shape {distances.shape}")
    if tolerance < 0:
        raise InputError(f"tolerance must be non-negative, got {tolerance}")
    m, k = distances.shape
    if weights is None:
        weights = np.full(m, 1.0 / m)
    species_arr = None if species is None else np.asarray(species, dtype=np.int64)

    labels = _partition(distances, tolerance, species_arr)
    groups = [np.flatnonzero(labels == g) for g in range(labels.max() + 1)]
    group_weights = np.array([weights[g].sum() for g in groups])
    group_rows = np.array([np.average(distances[g], axis=0, weights=weights[g]) for g in groups])
    group_first = [int(g[0]) for g in groups]
    group_species = None if species_arr is None else species_arr[group_first]

    def compare(a: int, b: int) -> int:
        for x, y in zip(group_rows[a], group_rows[b]):
            if abs(x - y) > ORDER_TIE_BAND:
                return -1 if x < y else 1
        if group_species is not None and group_species[a] != group_species[b]:
            return -1 if group_species[a] < group_species[b] else 1
        return -1 if group_first[a] < group_first[b] else int(group_first[a] > group_first[b])

    order = sorted(range(len(groups)), key=functools.cmp_to_key(compare))
    return Pdd(
        weights=group_weights[order],
        rows=group_rows[order],
        k=k,
        tolerance=float(tolerance),
        species=None if group_species is None else group_species[order],
        source_id=source_id,
    )


def pdd(
    pset: PeriodicSet,
    k: int = DEFAULT_K,
    tolerance: float = DEFAULT_TOLERANCE,
    species_aware: bool = True,
    max_points: Optional[int] = None,
) -> Pdd:
    """
    Pointwise distance distribution of a periodic set.

    Args:
        pset: Periodic set.
        k: Number of neighbours per row.
        tolerance: Collapse tolerance in angstroms (L-inf between rows).
        species_aware: Only merge rows of points with the same atomic number.
        max_points: Point budget of the neighbour search.

    Returns:
        The Pdd; r <= m rows with weights summing to 1.
    """
    distances = knn_distances(pset, k, max_points)
    species = pset.motif.species if species_aware else None
    result = collapse_rows(distances, tolerance, species=species, source_id=pset.id)
    logger.debug("Computed PDD", source_id=pset.id, m=pset.m, rows=result.r, k=k)
    return result


def amd(p: Pdd) -> Amd:
    """Weighted column means of a Pdd."""
    return Amd(values=p.weights @ p.rows, k=p.k, source_id=p.source_id)


def generic_k_upper_bound(pset: PeriodicSet, k: int) -> bool:
    """
    True when every k-th neighbour distance exceeds twice the covering radius bound.
    """
    distances = knn_distances(pset, k)
    return bool(distances[:, k - 1].min() > 2.0 * covering_radius_upper_bound(pset.basis))


def stable_k(
    pset: PeriodicSet,
    k_max: int,
    tolerance: float = DEFAULT_TOLERANCE,
    species_aware: bool = True,
) -> int:
    """
    Smallest k whose collapse partition of the motif equals the one at k_max.

    Distances are computed once at k_max; the rows at k are their first k
    columns.
    """
    if k_max < 1:
        raise InputError(f"k_max must be at least 1, got {k_max}")
    distances = knn_distances(pset, k_max)
    species = pset.motif.species if species_aware else None
    target = _canonical(_partition(distances, tolerance, species))
    for k in range(1, k_max):
        if _canonical(_partition(distances[:, :k], tolerance, species)) == target:
            return k
    return k_max


def stable_k_coverage(
    sets: Iterable[PeriodicSet],
    k: int,
    k_max: int,
    tolerance: float = DEFAULT_TOLERANCE,
    species_aware: bool = True,
) -> float:
    """Fraction of sets whose stable k is at most ``k``."""
    values = [stable_k(s, k_max, tolerance, species_aware) for s in sets]
    if not values:
        raise InputError("no structures given")
    return sum(v <= k for v in values) / len(values)


def ppc(pset: PeriodicSet) -> float:
    """
    Point packing coefficient: cube root of cell volume over m unit-ball volumes.

    Rows of the PDD and the AMD grow like ``ppc * k**(1/3)`` for large k.
    """
    return float((pset.basis.volume / (pset.m * 4.0 * np.pi / 3.0)) ** (1.0 / 3.0))


def amd_estimate(pset: PeriodicSet, k: int) -> Amd:
    """Asymptotic AMD estimate ``ppc * j**(1/3)`` for j = 1..k."""
    values = ppc(pset) * np.arange(1, k + 1, dtype=np.float64) ** (1.0 / 3.0)
    return Amd(values=values, k=k, source_id=pset.id)


def input_size_ratio(
    pset: PeriodicSet,
    k: int,
    tolerances: Sequence[float],
    species_aware: bool = True,
) -> Dict[float, float]:
    """
    Collapsed row count over motif size for each tolerance.
    """
    distances = knn_distances(pset, k)
    species = pset.motif.species if species_aware else None
    return {
        float(tol): (_partition(distances, tol, species).max() + 1) / pset.m
        for tol in tolerances
    }


def pdd_frame(p: Pdd) -> pd.DataFrame:
    """Weight column, optional species column, then d1..dk."""
    frame = pd.DataFrame(p.rows, columns=[f"d{j + 1}" for j in range(p.k)])
    if p.species is not None:
        frame.insert(0, "species", p.species)
    frame.insert(0, "weight", p.weights)
    return frame


def write_pdd(p: Pdd, path: Union[str, Path], fmt: str = "json") -> Path:
    """Write a Pdd as JSON or CSV."""
    path = Path(path)
    if fmt == "json":
        path.write_text(json.dumps(p.to_dict(), indent=2) + "\n", encoding="utf-8")
    elif fmt == "csv":
        pdd_frame(p).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    else:
        raise InputError(f"unknown PDD format {fmt!r}")
    return path


def read_pdd(path: Union[str, Path]) -> Pdd:
    """Load a Pdd written as JSON."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise InputError(f"cannot read PDD file {path}: {e}") from e
    try:
        return Pdd.from_dict(data)
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, InputError):
            raise
        raise InputError(f"malformed PDD file {path}: {e}") from e


def amd_frame(amds: List[Amd]) -> pd.DataFrame:
    """One row per structure: id then a1..ak."""
    if not amds:
        raise InputError("no AMD vectors given")
    k = amds[0].k
    frame = pd.DataFrame([a.values for a in amds], columns=[f"a{j + 1}" for j in range(k)])
    frame.insert(0, "id", [a.source_id for a in amds])
    return frame
