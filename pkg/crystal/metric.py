"""
Earth mover's distance between PDDs.

The transportation problem between the weighted rows of two PDDs is solved
exactly by successive shortest paths on the bipartite residual graph.
"""
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog
from scipy.spatial.distance import cdist

from shared.errors import InputError, KMismatch, LengthMismatch, NumericalError
from shared.types import Amd, EmdResult, Pdd, TransportPlan


logger = structlog.get_logger()

GROUND_METRICS = ("chebyshev", "euclidean", "cityblock")
DEFAULT_METRIC = "chebyshev"

# Masses at or below this are treated as zero.
MASS_EPS = 1e-12

BALANCE_TOL = 1e-9

# Path lengths must improve by more than this to relax an edge.
_RELAX_EPS = 1e-14


def _check_metric(metric: str) -> None:
    if metric not in GROUND_METRICS:
        raise InputError(f"unknown ground metric {metric!r}, choose from {GROUND_METRICS}")


def ground_distance(row_a: Sequence[float], row_b: Sequence[float], metric: str = DEFAULT_METRIC) -> float:
    """
    Distance between two PDD rows, L-inf by default.

    Raises:
        LengthMismatch: If the rows have different lengths.
    """
    _check_metric(metric)
    a = np.asarray(row_a, dtype=np.float64)
    b = np.asarray(row_b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"rows have lengths {a.size} and {b.size}")
    return float(cdist(a[None, :], b[None, :], metric=metric)[0, 0])


def _shortest_paths(
    cost: np.ndarray, flow: np.ndarray, supply: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Bellman-Ford from every source with remaining supply.

    Forward edges source->sink are uncapacitated with cost C; reverse edges
    sink->source exist where flow is positive, with cost -C.

    Returns:
        Sink distances, the source feeding each sink, and the sink feeding
        each source (-1 for path origins).
    """
    n, m = cost.shape
    dist_src = np.where(supply > MASS_EPS, 0.0, np.inf)
    pred_src = np.full(n, -1)
    dist_snk = np.full(m, np.inf)
    pred_snk = np.full(m, -1)
    reverse_cost = np.where(flow > MASS_EPS, -cost, np.inf)

    for _ in range(n + m + 1):
        through = dist_src[:, None] + cost
        best_src = through.argmin(axis=0)
        candidate = through[best_src, np.arange(m)]
        better = candidate < dist_snk - _RELAX_EPS
        dist_snk[better] = candidate[better]
        pred_snk[better] = best_src[better]

        back = dist_snk[None, :] + reverse_cost
        best_snk = back.argmin(axis=1)
        candidate = back[np.arange(n), best_snk]
        improved = candidate < dist_src - _RELAX_EPS
        dist_src[improved] = candidate[improved]
        pred_src[improved] = best_snk[improved]

        if not better.any() and not improved.any():
            break
    return dist_snk, pred_snk, pred_src


def transport(
    supply: np.ndarray, demand: np.ndarray, cost: np.ndarray
) -> np.ndarray:
    """
    Minimum-cost flow matrix for a balanced transportation problem.

    Args:
        supply: Source masses (n,).
        demand: Sink masses (m,), same total as ``supply``.
        cost: (n, m) non-negative edge costs.

    Returns:
        (n, m) optimal flow.
    """
    supply = np.array(supply, dtype=np.float64)
    demand = np.array(demand, dtype=np.float64)
    if abs(supply.sum() - demand.sum()) > BALANCE_TOL:
        raise InputError(
            f"unbalanced transport problem: {supply.sum():.17g} vs {demand.sum():.17g}"
        )
    n, m = cost.shape
    flow = np.zeros((n, m))
    limit = 4 * (n * m + n + m)
    for _ in range(limit):
        if supply.max() <= MASS_EPS or demand.max() <= MASS_EPS:
            return flow
        dist_snk, pred_snk, pred_src = _shortest_paths(cost, flow, supply)
        open_sinks = np.where(demand > MASS_EPS, dist_snk, np.inf)
        sink = int(open_sinks.argmin())
        if not np.isfinite(open_sinks[sink]):
            break

        # Walk back to the originating source, collecting edges.
        forward: List[Tuple[int, int]] = []
        backward: List[Tuple[int, int]] = []
        j = sink
        while True:
            i = int(pred_snk[j])
            forward.append((i, j))
            j_prev = int(pred_src[i])
            if j_prev < 0:
                break
            backward.append((i, j_prev))
            j = j_prev
            if len(forward) > n + m:
                raise NumericalError("cycle in shortest-path tree")

        delta = min(supply[i], demand[sink])
        if backward:
            delta = min(delta, min(flow[e] for e in backward))
        for e in forward:
            flow[e] += delta
        for e in backward:
            flow[e] -= delta
            if flow[e] <= MASS_EPS:
                flow[e] = 0.0
        supply[i] -= delta
        demand[sink] -= delta
    raise NumericalError("transport solver did not converge")


def _key(p: Pdd) -> tuple:
    return (p.r, p.rows.tobytes(), p.weights.tobytes())


def emd(p: Pdd, q: Pdd, metric: str = DEFAULT_METRIC) -> EmdResult:
    """
    Earth mover's distance between two PDDs.

    The arguments are put in a fixed order before solving, so ``emd(p, q)``
    and ``emd(q, p)`` return the same cost bit for bit (plans are transposed).

    Args:
        p, q: PDDs with equal k. Species columns are ignored.
        metric: Ground metric between rows.

    Returns:
        EmdResult(cost, plan) with plan flows indexed (row of p, row of q).

    Raises:
        KMismatch: If the PDDs have different k.
    """
    if p.k != q.k:
        raise KMismatch(p.k, q.k)
    _check_metric(metric)
    swapped = _key(q) < _key(p)
    a, b = (q, p) if swapped else (p, q)

    cost = cdist(a.rows, b.rows, metric=metric)
    flow = transport(a.weights, b.weights, cost)
    sources, sinks = np.nonzero(flow > MASS_EPS)
    total = float(sum(flow[i, j] * cost[i, j] for i, j in zip(sources, sinks)))
    if swapped:
        flow = flow.T
    sources, sinks = np.nonzero(flow > MASS_EPS)
    flows = tuple((int(i), int(j), float(flow[i, j])) for i, j in zip(sources, sinks))
    return EmdResult(cost=total, plan=TransportPlan(flows=flows, cost=total))


def distance_matrix(pdds: Sequence[Pdd], metric: str = DEFAULT_METRIC, threads: int = 1) -> np.ndarray:
    """
    Pairwise EMD matrix; the upper triangle is solved in a thread pool.

    Raises:
        KMismatch: If the PDDs do not all share one k.
    """
    n = len(pdds)
    for p in pdds[1:]:
        if p.k != pdds[0].k:
            raise KMismatch(pdds[0].k, p.k)
    matrix = np.zeros((n, n))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]

    def solve(pair: Tuple[int, int]) -> float:
        i, j = pair
        return emd(pdds[i], pdds[j], metric=metric).cost

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for (i, j), value in zip(pairs, pool.map(solve, pairs)):
            matrix[i, j] = matrix[j, i] = value
    logger.info("Computed distance matrix", structures=n, pairs=len(pairs), threads=threads)
    return matrix


def amd_distance(a: Amd, b: Amd) -> float:
    """L-inf distance between AMD vectors."""
    if a.k != b.k:
        raise KMismatch(a.k, b.k)
    return float(np.abs(np.asarray(a.values) - np.asarray(b.values)).max())


def write_distance_matrix(matrix: np.ndarray, ids: Sequence[str], path: Union[str, Path]) -> Path:
    """CSV with a header row of ids and the id of each row in the first column."""
    frame = pd.DataFrame(matrix, columns=list(ids))
    frame.insert(0, "id", list(ids))
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return Path(path)


def read_distance_matrix(path: Union[str, Path]) -> Tuple[np.ndarray, List[str]]:
    """Inverse of ``write_distance_matrix``."""
    try:
        frame = pd.read_csv(path, dtype={"id": str}, float_precision="round_trip")
    except (OSError, ValueError) as e:
        raise InputError(f"cannot read distance matrix {path}: {e}") from e
    if "id" not in frame.columns:
        raise InputError(f"distance matrix {path} has no id column")
    ids = frame["id"].astype(str).tolist()
    values = frame.drop(columns="id")
    if values.shape != (len(ids), len(ids)):
        raise InputError(f"distance matrix {path} is not square: {values.shape}")
    try:
        return values.to_numpy(dtype=np.float64), ids
    except ValueError as e:
        raise InputError(f"distance matrix {path} holds non-numeric entries") from e
