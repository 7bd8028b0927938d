"""
Shared fixtures and hypothesis profiles.
"""
import os

import hypothesis
import numpy as np
import pytest

from shared.config import reset_config
from shared.types import LatticeBasis, Motif, PeriodicSet


hypothesis.settings.register_profile("ci", max_examples=25, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=200, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


@pytest.fixture(autouse=True)
def fresh_config():
    """Each test starts without a cached global configuration."""
    reset_config()
    yield
    reset_config()


@pytest.fixture
def unit_cube() -> PeriodicSet:
    """One atom in a unit cubic cell."""
    return PeriodicSet(
        basis=LatticeBasis(np.eye(3)),
        motif=Motif(np.zeros((1, 3)), np.array([14])),
        id="cube",
    )


@pytest.fixture
def rock_salt() -> PeriodicSet:
    """Simple cubic arrangement of two species: every point has the same neighbour distances."""
    frac = np.array([
        [0.0, 0.0, 0.0],
        [0.5, 0.0, 0.0],
    ])
    basis = np.diag([2.0, 1.0, 1.0])
    return PeriodicSet(
        basis=LatticeBasis(basis),
        motif=Motif(frac, np.array([11, 17])),
        id="rock-salt",
    )


@pytest.fixture
def minimal_cif() -> str:
    return """\
data_si
_cell_length_a 4
_cell_length_b 4
_cell_length_c 4
_cell_angle_alpha 90
_cell_angle_beta 90
_cell_angle_gamma 90
loop_
_atom_site_label
_atom_site_type_symbol
_atom_site_fract_x
_atom_site_fract_y
_atom_site_fract_z
Si1 Si 0 0 0
"""
