"""
Lattice geometry: cell parameters, isometries, supercells and random test sets.

Basis matrices hold the lattice vectors as ROWS, so Cartesian positions are
``frac @ basis`` and fractional positions are ``cart @ inv(basis)``.
"""
from itertools import product
from typing import Optional, Tuple

import numpy as np
import structlog

from shared.errors import DegenerateCell, GenerationFailed, InputError, SupercellOverflow
from shared.types import FLAT_CELL_TOL, Isometry, LatticeBasis, Motif, PeriodicSet, wrap_fractional


logger = structlog.get_logger()

DEFAULT_MAX_SUPERCELL_POINTS = 100_000

# H, C, O, Si, Fe
SPECIES_PALETTE = (1, 6, 8, 14, 26)

MIN_SEPARATION = 0.1

# All 26 neighbouring cells plus the home cell.
_IMAGE_OFFSETS = np.array(list(product((-1, 0, 1), repeat=3)), dtype=np.float64)

# Sign patterns of the cell diagonals, one per diagonal.
_DIAGONAL_SIGNS = np.array([[1, 1, 1], [1, 1, -1], [1, -1, 1], [-1, 1, 1]], dtype=np.float64)


def _cos_deg(angle: float) -> float:
    # cos(pi/2) is 6e-17 in floating point; right angles must give exact zeros.
    if angle == 90.0:
        return 0.0
    return float(np.cos(np.radians(angle)))


def cell_params_to_basis(
    a: float, b: float, c: float, alpha: float, beta: float, gamma: float
) -> LatticeBasis:
    """
    Build a basis from crystallographic cell parameters.

    v1 lies along +x, v2 in the xy-plane with positive y, v3 has positive z.

    Args:
        a, b, c: Cell lengths in angstroms.
        alpha, beta, gamma: Angles (b,c), (a,c), (a,b) in degrees.

    Returns:
        The LatticeBasis.

    Raises:
        DegenerateCell: If a length or angle is out of range, or the implied
            volume is not positive.
    """
    params = np.array([a, b, c, alpha, beta, gamma], dtype=np.float64)
    if not np.all(np.isfinite(params)):
        raise DegenerateCell(f"cell parameters must be finite, got {params.tolist()}")
    if min(a, b, c) <= 0:
        raise DegenerateCell(f"cell lengths must be positive, got {(a, b, c)}")
    if not all(0.0 < angle < 180.0 for angle in (alpha, beta, gamma)):
        raise DegenerateCell(f"cell angles must lie in (0, 180), got {(alpha, beta, gamma)}")

    cos_a, cos_b, cos_g = _cos_deg(alpha), _cos_deg(beta), _cos_deg(gamma)
    sin_g = 1.0 if gamma == 90.0 else float(np.sin(np.radians(gamma)))
    volume_factor = 1.0 - cos_a ** 2 - cos_b ** 2 - cos_g ** 2 + 2.0 * cos_a * cos_b * cos_g
    if not np.isfinite(volume_factor) or volume_factor <= FLAT_CELL_TOL ** 2:
        raise DegenerateCell(
            f"cell ({a}, {b}, {c}, {alpha}, {beta}, {gamma}) has no positive volume"
        )

    cy = (cos_a - cos_b * cos_g) / sin_g
    cz = np.sqrt(volume_factor) / sin_g
    matrix = np.array([
        [a, 0.0, 0.0],
        [b * cos_g, b * sin_g, 0.0],
        [c * cos_b, c * cy, c * cz],
    ])
    return LatticeBasis(matrix)


def basis_to_cell_params(basis: LatticeBasis) -> Tuple[float, float, float, float, float, float]:
    """
    Recover (a, b, c, alpha, beta, gamma) from a basis; angles in degrees.
    """
    v1, v2, v3 = basis.v1, basis.v2, basis.v3
    a, b, c = (float(np.linalg.norm(v)) for v in (v1, v2, v3))

    def angle(u: np.ndarray, v: np.ndarray, nu: float, nv: float) -> float:
        cosine = float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))
        return float(np.degrees(np.arccos(cosine)))

    return a, b, c, angle(v2, v3, b, c), angle(v1, v3, a, c), angle(v1, v2, a, b)


def apply_isometry(pset: PeriodicSet, iso: Isometry) -> PeriodicSet:
    """
    Rotate (or reflect) and translate a periodic set.

    Basis rows and motif points are mapped by the orthogonal part; motif points
    are then translated and re-expressed in the new basis. A reflection flips
    the handedness of the rotated basis, so its last row is negated; the
    lattice it generates is unchanged.
    """
    basis = pset.basis.matrix @ iso.rotation.T
    if iso.is_reflection:
        basis = basis.copy()
        basis[2] = -basis[2]
    cart = pset.cartesian_positions() @ iso.rotation.T + iso.translation
    frac = cart @ np.linalg.inv(basis)
    return PeriodicSet(
        basis=LatticeBasis(basis),
        motif=Motif(frac, pset.motif.species),
        id=pset.id,
    )


def supercell(
    pset: PeriodicSet,
    nx: int,
    ny: int,
    nz: int,
    max_points: Optional[int] = None,
) -> PeriodicSet:
    """
    Replicate the unit cell nx x ny x nz times.

    Args:
        pset: Source set.
        nx, ny, nz: Positive replication counts along v1, v2, v3.
        max_points: Upper limit on the replicated motif size.

    Returns:
        The same periodic set described by the larger cell.

    Raises:
        SupercellOverflow: If the motif would exceed ``max_points``.
    """
    counts = (nx, ny, nz)
    if any(int(n) != n or n < 1 for n in counts):
        raise InputError(f"supercell counts must be positive integers, got {counts}")
    limit = DEFAULT_MAX_SUPERCELL_POINTS if max_points is None else max_points
    total = pset.m * nx * ny * nz
    if total > limit:
        raise SupercellOverflow(total, limit)

    scale = np.array(counts, dtype=np.float64)
    offsets = np.array(list(product(range(nx), range(ny), range(nz))), dtype=np.float64)
    frac = (pset.motif.frac_coords[None, :, :] + offsets[:, None, :]) / scale
    species = np.tile(pset.motif.species, len(offsets))

    logger.debug("Built supercell", source_id=pset.id, counts=counts, points=total)
    return PeriodicSet(
        basis=LatticeBasis(pset.basis.matrix * scale[:, None]),
        motif=Motif(frac.reshape(-1, 3), species),
        id=pset.id,
    )


def _min_image_distances(frac: np.ndarray, others: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Shortest periodic distance from one fractional point to each of ``others``."""
    diff = others - frac
    diff -= np.round(diff)
    images = diff[:, None, :] + _IMAGE_OFFSETS[None, :, :]
    return np.linalg.norm(images @ basis, axis=2).min(axis=1)


def random_periodic_set(
    seed: int,
    m: int,
    distortion: float = 0.0,
    max_attempts: int = 1000,
) -> PeriodicSet:
    """
    Generate a random periodic set for property tests and benchmarks.

    The cell is a cube of volume m (so the density stays near one point per
    cubic angstrom) perturbed by a matrix with entries in
    ``[-distortion/3, distortion/3]``, which keeps it diagonally dominant and
    right-handed for distortion in [0, 1). The first point sits at the origin;
    the rest are rejection-sampled to stay at least 0.1 angstrom apart under
    periodicity.

    Args:
        seed: Seed of the numpy generator; equal seeds give equal sets.
        m: Motif size.
        distortion: Cell distortion in [0, 1).
        max_attempts: Rejection-sampling attempts allowed per point.

    Raises:
        GenerationFailed: If a point cannot be placed within the attempt budget.
    """
    if m < 1:
        raise InputError(f"motif size must be at least 1, got {m}")
    if not 0.0 <= distortion < 1.0:
        raise InputError(f"distortion must lie in [0, 1), got {distortion}")

    rng = np.random.default_rng(seed)
    scale = float(m) ** (1.0 / 3.0)
    noise = rng.uniform(-distortion / 3.0, distortion / 3.0, size=(3, 3))
    basis = scale * (np.eye(3) + noise)

    points = [np.zeros(3)]
    attempts = 0
    budget = max_attempts * m
    while len(points) < m:
        if attempts >= budget:
            raise GenerationFailed(attempts, len(points), m)
        attempts += 1
        candidate = rng.random(3)
        if _min_image_distances(candidate, np.array(points), basis).min() >= MIN_SEPARATION:
            points.append(candidate)

    species = rng.choice(SPECIES_PALETTE, size=m)
    logger.debug("Generated periodic set", seed=seed, m=m, attempts=attempts)
    return PeriodicSet(
        basis=LatticeBasis(basis),
        motif=Motif(np.array(points), species),
        id=f"random-{seed}-{m}",
    )


def perturb_motif(pset: PeriodicSet, epsilon: float, seed: int) -> PeriodicSet:
    """
    Move every motif point by an independent random vector of norm at most epsilon.

    Directions are isotropic and radii are uniform in the ball, so the same
    seed with a different epsilon scales every displacement linearly.
    """
    if epsilon < 0:
        raise InputError(f"epsilon must be non-negative, got {epsilon}")
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(pset.m, 3))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    directions = directions / np.where(norms > 0, norms, 1.0)
    radii = epsilon * rng.random(pset.m) ** (1.0 / 3.0)
    displacement = directions * radii[:, None]

    frac = pset.motif.frac_coords + displacement @ np.linalg.inv(pset.basis.matrix)
    return PeriodicSet(
        basis=pset.basis,
        motif=Motif(wrap_fractional(frac), pset.motif.species),
        id=pset.id,
    )


def random_isometry(seed: int, reflect: bool = False, max_shift: float = 10.0) -> Isometry:
    """
    Random orthogonal map plus a translation in ``[-max_shift, max_shift]^3``.

    The orthogonal part comes from the QR factorization of a Gaussian matrix
    with the signs of R's diagonal folded into Q; ``reflect`` selects det -1.
    """
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if (np.linalg.det(q) < 0) != reflect:
        q[:, 0] = -q[:, 0]
    translation = rng.uniform(-max_shift, max_shift, size=3)
    return Isometry(rotation=q, translation=translation)


def cell_diameter(basis: LatticeBasis) -> float:
    """Longest cell diagonal, the largest distance between two points of the cell."""
    return float(np.linalg.norm(_DIAGONAL_SIGNS @ basis.matrix, axis=1).max())


def covering_radius_upper_bound(basis: LatticeBasis) -> float:
    """
    Half the longest cell diagonal.

    Every point of space lies in some translate of the cell, within half a
    diagonal of one of its corners, so this bounds the covering radius.
    """
    return 0.5 * cell_diameter(basis)


def minimal_interplane_spacing(basis: LatticeBasis) -> float:
    """
    Smallest distance between adjacent lattice planes parallel to a cell face.

    Columns of ``inv(basis)`` are the reciprocal vectors; plane spacing along
    each is one over its norm. Any translate n of the lattice satisfies
    ``|n @ basis| >= max|n_i| * spacing``.
    """
    reciprocal_norms = np.linalg.norm(np.linalg.inv(basis.matrix), axis=0)
    return float(1.0 / reciprocal_norms.max())
