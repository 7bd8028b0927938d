"""
Empirical scaling of PDD and EMD computation with motif size.
"""
import time
from typing import Callable, Dict, Sequence

import numpy as np
import pandas as pd
import structlog

from crystal.geometry import random_periodic_set
from crystal.metric import emd
from crystal.pdd import pdd


logger = structlog.get_logger()


def _timed(fn: Callable[[], object], repeats: int) -> np.ndarray:
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return np.array(times)


def fit_exponent(sizes: Sequence[int], seconds: Sequence[float]) -> float:
    """Slope of log(seconds) against log(size)."""
    if len(sizes) < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(np.asarray(sizes, dtype=np.float64)),
                          np.log(np.maximum(np.asarray(seconds), 1e-12)), 1)
    return float(slope)


def run_bench(
    sizes: Sequence[int],
    k: int = 15,
    repeats: int = 5,
    seed: int = 0,
    distortion: float = 0.3,
) -> Dict[str, object]:
    """
    Time PDD (tolerance 0) and EMD on random sets of each motif size.

    Returns:
        ``{"table": DataFrame, "pdd_exponent": float, "emd_exponent": float}``;
        the table has one row per size with median and standard deviation of
        the timings.
    """
    rows = []
    for m in sizes:
        first = random_periodic_set(seed, m, distortion)
        second = random_periodic_set(seed + 1, m, distortion)
        pdd_times = _timed(lambda: pdd(first, k, 0.0), repeats)
        p, q = pdd(first, k, 0.0), pdd(second, k, 0.0)
        emd_times = _timed(lambda: emd(p, q), repeats)
        rows.append({
            "m": m,
            "k": k,
            "pdd_median_s": float(np.median(pdd_times)),
            "pdd_std_s": float(np.std(pdd_times)),
            "emd_median_s": float(np.median(emd_times)),
            "emd_std_s": float(np.std(emd_times)),
        })
        logger.info("Benchmarked size", **rows[-1])

    table = pd.DataFrame(rows, columns=["m", "k", "pdd_median_s", "pdd_std_s",
                                        "emd_median_s", "emd_std_s"])
    return {
        "table": table,
        "pdd_exponent": fit_exponent(table["m"], table["pdd_median_s"]),
        "emd_exponent": fit_exponent(table["m"], table["emd_median_s"]),
    }
