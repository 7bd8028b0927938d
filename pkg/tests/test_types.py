"""
Unit tests for shared data types.
"""
import json

import numpy as np
import pytest
from pydantic import ValidationError

from shared.errors import DegenerateCell, EmptyMotif, InputError
from shared.types import (
    FileDigest,
    Isometry,
    LatticeBasis,
    Motif,
    Pdd,
    PeriodicSet,
    PstConfig,
    RunManifest,
    TrainOpts,
    TransportPlan,
    wrap_fractional,
)


class TestLatticeBasis:
    """Test LatticeBasis dataclass."""

    def test_basis_creation(self):
        basis = LatticeBasis(np.diag([2.0, 3.0, 4.0]))
        assert basis.volume == pytest.approx(24.0)
        np.testing.assert_array_equal(basis.v2, [0.0, 3.0, 0.0])
        assert basis.to_list()[2] == [0.0, 0.0, 4.0]

    def test_basis_is_read_only(self):
        source = np.eye(3)
        basis = LatticeBasis(source)
        source[0, 0] = 5.0
        assert basis.matrix[0, 0] == 1.0
        with pytest.raises(ValueError):
            basis.matrix[0, 0] = 2.0

    @pytest.mark.parametrize("matrix", [
        np.zeros((3, 3)),
        np.eye(2),
        np.diag([1.0, 1.0, -1.0]),
        np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 1.0]]),
        np.full((3, 3), np.nan),
    ])
    def test_degenerate(self, matrix):
        """Singular, left-handed or non-finite bases are rejected."""
        with pytest.raises(DegenerateCell):
            LatticeBasis(matrix)


class TestMotif:
    """Test Motif dataclass."""

    def test_wrapping(self):
        motif = Motif(np.array([[1.25, -0.25, 2.0]]), np.array([6]))
        np.testing.assert_allclose(motif.frac_coords, [[0.25, 0.75, 0.0]])

    def test_near_one_wraps_to_zero(self):
        wrapped = wrap_fractional(np.array([[1.0 - 1e-13, 0.5, -1e-16]]))
        assert wrapped[0, 0] == 0.0
        assert wrapped[0, 2] == 0.0
        assert np.all((wrapped >= 0.0) & (wrapped < 1.0))

    def test_empty(self):
        with pytest.raises(EmptyMotif):
            Motif(np.zeros((0, 3)), np.zeros(0, dtype=int))

    def test_species_count(self):
        with pytest.raises(InputError):
            Motif(np.zeros((2, 3)), np.array([1]))

    @pytest.mark.parametrize("species", [0, 119])
    def test_species_range(self, species):
        with pytest.raises(InputError):
            Motif(np.zeros((1, 3)), np.array([species]))


class TestPeriodicSet:
    """Test PeriodicSet dataclass."""

    def test_cartesian_positions(self, rock_salt):
        np.testing.assert_allclose(rock_salt.cartesian_positions(), [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        assert rock_salt.m == 2
        assert rock_salt.density() == pytest.approx(1.0)

    def test_serialization(self, rock_salt):
        """Test converting a periodic set to/from dict."""
        data = json.loads(json.dumps(rock_salt.to_dict()))
        back = PeriodicSet.from_dict(data)

        assert back.id == "rock-salt"
        np.testing.assert_array_equal(back.basis.matrix, rock_salt.basis.matrix)
        np.testing.assert_array_equal(back.motif.frac_coords, rock_salt.motif.frac_coords)
        np.testing.assert_array_equal(back.motif.species, [11, 17])


class TestIsometry:
    """Test Isometry dataclass."""

    def test_reflection(self):
        assert Isometry(np.diag([1.0, 1.0, -1.0])).is_reflection
        assert not Isometry(np.eye(3), np.ones(3)).is_reflection

    def test_not_orthogonal(self):
        with pytest.raises(InputError):
            Isometry(np.diag([2.0, 1.0, 1.0]))


class TestPdd:
    """Test Pdd validation and serialization."""

    def make(self, **kwargs):
        fields = dict(weights=np.array([0.25, 0.75]), rows=np.array([[1.0, 2.0], [1.5, 1.5]]), k=2, tolerance=1e-4)
        fields.update(kwargs)
        return Pdd(**fields)

    def test_matrix(self):
        p = self.make()
        assert p.r == 2
        np.testing.assert_array_equal(p.matrix(), [[0.25, 1.0, 2.0], [0.75, 1.5, 1.5]])

    def test_serialization(self):
        p = self.make(species=np.array([8, 14]), source_id="quartz")
        data = json.loads(json.dumps(p.to_dict()))
        assert data["id"] == "quartz"
        back = Pdd.from_dict(data)
        np.testing.assert_array_equal(back.rows, p.rows)
        np.testing.assert_array_equal(back.weights, p.weights)
        np.testing.assert_array_equal(back.species, [8, 14])
        assert back.tolerance == 1e-4

    def test_species_optional(self):
        assert Pdd.from_dict(self.make().to_dict()).species is None

    @pytest.mark.parametrize("kwargs", [
        {"weights": np.array([0.5, 0.4])},
        {"weights": np.array([1.0, 0.0])},
        {"weights": np.array([1.0])},
        {"rows": np.array([[2.0, 1.0], [1.0, 1.0]])},
        {"rows": np.array([[0.0, 1.0], [1.0, 1.0]])},
        {"rows": np.array([[np.inf, np.inf], [1.0, 1.0]])},
        {"k": 3},
        {"species": np.array([1])},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(InputError):
            self.make(**kwargs)


class TestTransportPlan:
    """Test TransportPlan marginals."""

    def test_marginals(self):
        plan = TransportPlan(flows=((0, 0, 0.25), (0, 1, 0.25), (1, 1, 0.5)), cost=0.1)
        np.testing.assert_allclose(plan.outflow(2), [0.5, 0.5])
        np.testing.assert_allclose(plan.inflow(2), [0.25, 0.75])
        assert plan.to_dict()["flows"][1] == {"source": 0, "sink": 1, "mass": 0.25}


class TestPstConfig:
    """Test model hyper-parameters."""

    def test_defaults(self):
        config = PstConfig()
        assert config.head_dim == 32
        assert config.weighted_attention and config.weighted_pooling

    def test_heads_must_divide_width(self):
        with pytest.raises(ValidationError):
            PstConfig(d_model=10, heads=3)

    def test_extra_keys_forbidden(self):
        with pytest.raises(ValidationError):
            PstConfig(width=4)

    def test_dropout_range(self):
        with pytest.raises(ValidationError):
            PstConfig(attention_dropout=1.0)


class TestTrainOpts:
    """Test training options."""

    @pytest.mark.parametrize("n,expected", [(1, 32), (4999, 32), (5000, 64), (100_000, 64)])
    def test_default_batch_size(self, n, expected):
        assert TrainOpts().resolved_batch_size(n) == expected

    def test_explicit_batch_size(self):
        assert TrainOpts(batch_size=7).resolved_batch_size(10_000) == 7

    def test_val_fraction_range(self):
        with pytest.raises(ValidationError):
            TrainOpts(val_fraction=1.0)


class TestRunManifest:
    """Test RunManifest model."""

    def test_json_round_trip(self):
        manifest = RunManifest(
            command="dist",
            config={"k": 4},
            inputs=[FileDigest(path="a.cif", sha256="0" * 64)],
            version="0.1.0",
            timings={"emd": 0.5},
        )
        back = RunManifest.model_validate_json(manifest.model_dump_json())
        assert back == manifest
        assert back.outputs == []
        assert back.started_at.endswith("+00:00")
