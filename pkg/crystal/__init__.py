"""Periodic sets, CIF input, PDD invariants, EMD metric and MDS projections."""

from crystal.geometry import (
    apply_isometry,
    cell_params_to_basis,
    covering_radius_upper_bound,
    perturb_motif,
    random_periodic_set,
    supercell,
)
from crystal.cif import parse_cif, read_cif, to_periodic_set, write_cif
from crystal.pdd import amd, generic_k_upper_bound, knn_distances, pdd, stable_k
from crystal.metric import distance_matrix, emd, ground_distance
from crystal.mds import classical_mds

__all__ = [
    # Geometry
    "apply_isometry",
    "cell_params_to_basis",
    "covering_radius_upper_bound",
    "perturb_motif",
    "random_periodic_set",
    "supercell",
    # CIF
    "parse_cif",
    "read_cif",
    "to_periodic_set",
    "write_cif",
    # Invariants
    "amd",
    "generic_k_upper_bound",
    "knn_distances",
    "pdd",
    "stable_k",
    # Metric
    "distance_matrix",
    "emd",
    "ground_distance",
    # Projection
    "classical_mds",
]
