"""
Brute-force reference implementations used to check the fast code paths.
"""
from itertools import product
from typing import Dict

import numpy as np
import torch
from scipy.optimize import linprog
from scipy.spatial.distance import cdist

from shared.types import Pdd, PeriodicSet


def brute_force_knn(pset: PeriodicSet, k: int, reach: int = 4) -> np.ndarray:
    """
    k nearest neighbour distances over the (2 * reach + 1)^3 block of cells
    centred on the home cell.
    """
    shifts = np.array(list(product(range(-reach, reach + 1), repeat=3)))
    translates = shifts @ pset.basis.matrix
    cart = pset.cartesian_positions()
    points = (cart[None, :, :] + translates[:, None, :]).reshape(-1, 3)
    dists = cdist(cart, points)
    home = int(np.flatnonzero((shifts == 0).all(axis=1))[0])
    for i in range(pset.m):
        dists[i, home * pset.m + i] = np.inf
    return np.sort(dists, axis=1)[:, :k]


def lp_emd(p: Pdd, q: Pdd, metric: str = "chebyshev") -> float:
    """Transportation problem solved as a dense linear program."""
    cost = cdist(p.rows, q.rows, metric=metric)
    n, m = cost.shape
    a_eq = np.zeros((n + m, n * m))
    for i in range(n):
        a_eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        a_eq[n + j, j::m] = 1.0
    b_eq = np.concatenate([p.weights, q.weights])
    result = linprog(cost.reshape(-1), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    assert result.success, result.message
    return float(result.fun)


def random_pdd(rng: np.random.Generator, rows: int, k: int) -> Pdd:
    """A valid Pdd with random weights and sorted positive rows."""
    weights = rng.random(rows) + 0.05
    weights /= weights.sum()
    distances = np.sort(rng.uniform(0.5, 5.0, size=(rows, k)), axis=1)
    return Pdd(weights=weights, rows=distances, k=k, tolerance=0.0)


def finite_difference_grads(
    model: torch.nn.Module,
    rows: torch.Tensor,
    weights: torch.Tensor,
    species: torch.Tensor,
    step: float = 1e-5,
) -> Dict[str, torch.Tensor]:
    """Central differences of sum(predictions) for every parameter entry."""
    grads = {}
    with torch.no_grad():
        for name, param in model.named_parameters():
            grad = torch.zeros_like(param)
            flat = param.view(-1)
            for index in range(flat.numel()):
                original = flat[index].item()
                flat[index] = original + step
                plus = model(rows, weights, species)[0].sum().item()
                flat[index] = original - step
                minus = model(rows, weights, species)[0].sum().item()
                flat[index] = original
                grad.view(-1)[index] = (plus - minus) / (2 * step)
            grads[name] = grad
    return grads
