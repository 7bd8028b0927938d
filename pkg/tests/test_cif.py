"""
Tests for the CIF reader and writer.
"""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crystal.cif import (
    element_number,
    parse_cif,
    parse_number,
    parse_symop,
    read_cif,
    to_periodic_set,
    write_cif,
)
from crystal.geometry import random_periodic_set
from shared.errors import (
    CifSyntaxError,
    DegenerateCell,
    EmptyMotif,
    InputError,
    MissingTag,
    UnknownElement,
)
from shared.types import PeriodicSet


CELL = """\
_cell_length_a 4
_cell_length_b 4
_cell_length_c 4
_cell_angle_alpha 90
_cell_angle_beta 90
_cell_angle_gamma 90
"""


class TestTokenizer:
    """Test CIF syntax handling."""

    def test_minimal_block(self, minimal_cif):
        doc = parse_cif(minimal_cif, source="si.cif")
        assert doc.source == "si.cif"
        assert len(doc.blocks) == 1
        block = doc.blocks[0]
        assert block.name == "si"
        assert block.number("_cell_length_a") == 4.0
        assert block.column("_atom_site_type_symbol") == ["Si"]

    def test_uncertainty_stripped(self):
        doc = parse_cif("data_x\n_cell_length_a 4.123(5)\n")
        assert doc.blocks[0].number("_cell_length_a") == 4.123

    @pytest.mark.parametrize("text, value", [
        ("1", 1.0),
        ("-0.25", -0.25),
        (".5", 0.5),
        ("1.5e-3", 1.5e-3),
        ("90.00(12)", 90.0),
    ])
    def test_parse_number(self, text, value):
        assert parse_number(text) == value

    @pytest.mark.parametrize("text", ["?", ".", "abc", "1.2.3", "4(5"])
    def test_parse_number_rejects(self, text):
        with pytest.raises(InputError):
            parse_number(text, "_cell_length_a")

    def test_loop_arity_names_header_line(self):
        text = "data_x\n# header\nloop_\n_a\n_b\n_c\n_d\n1 2 3\n"
        with pytest.raises(CifSyntaxError) as exc:
            parse_cif(text)
        assert exc.value.line == 3

    def test_quotes_comments_and_text_fields(self):
        text = (
            "data_x\n"
            "_title 'it''s quoted' # trailing comment\n"
            "_other \"double quoted\"\n"
            "_long\n"
            ";\n"
            "first line\n"
            "second line\n"
            ";\n"
        )
        block = parse_cif(text).blocks[0]
        assert block.values["_title"] == "it''s quoted"
        assert block.values["_other"] == "double quoted"
        assert block.values["_long"] == "first line\nsecond line"

    def test_tags_are_case_insensitive(self):
        block = parse_cif("data_x\n_Cell_Length_A 3\n").blocks[0]
        assert block.number("_cell_length_a") == 3.0

    @pytest.mark.parametrize("text", [
        "_cell_length_a 4\n",
        "data_x\n_cell_length_a\n",
        "data_x\n_a 1\n_a 2\n",
        "data_x\nloop_\n1 2\n",
        "data_x\n_a 'open\n",
        "data_x\n_a\n;\nnever closed\n",
        "data_x\nstray\n",
        "data_x\nsave_frame\n",
        "",
    ])
    def test_syntax_errors(self, text):
        with pytest.raises(CifSyntaxError):
            parse_cif(text)

    def test_invalid_utf8_position(self):
        with pytest.raises(CifSyntaxError) as exc:
            parse_cif(b"data_x\n_a \xff\n")
        assert exc.value.line == 2
        assert exc.value.column == 4

    def test_multiple_blocks(self, minimal_cif):
        doc = parse_cif(minimal_cif + minimal_cif.replace("data_si", "data_si2"))
        assert [b.name for b in doc.blocks] == ["si", "si2"]


class TestSymmetry:
    """Test symmetry operators and expansion."""

    def test_parse_operator(self):
        rotation, translation = parse_symop("-y+1/2, x, z-1/3")
        np.testing.assert_array_equal(rotation, [[0, -1, 0], [1, 0, 0], [0, 0, 1]])
        np.testing.assert_array_equal(translation, [0.5, 0.0, -1 / 3])

    @pytest.mark.parametrize("text", ["x, y", "x, y, q", "x, y, z/0"])
    def test_bad_operator(self, text):
        with pytest.raises(InputError):
            parse_symop(text)

    def test_body_centred_expansion(self):
        text = (
            "data_bcc\n" + CELL +
            "loop_\n_symmetry_equiv_pos_as_xyz\n'x, y, z'\n'x+1/2, y+1/2, z+1/2'\n"
            "loop_\n_atom_site_label\n_atom_site_fract_x\n_atom_site_fract_y\n_atom_site_fract_z\n"
            "Fe1 0 0 0\n"
        )
        pset = to_periodic_set(parse_cif(text))
        assert pset.m == 2
        np.testing.assert_allclose(pset.motif.frac_coords, [[0, 0, 0], [0.5, 0.5, 0.5]])
        np.testing.assert_array_equal(pset.motif.species, [26, 26])

    def test_coinciding_images_merged(self):
        text = (
            "data_x\n" + CELL +
            "loop_\n_space_group_symop_operation_xyz\nx,y,z\n-x,-y,-z\n"
            "loop_\n_atom_site_type_symbol\n_atom_site_fract_x\n_atom_site_fract_y\n_atom_site_fract_z\n"
            "Si 0 0 0\nO 0.25 0.25 0.25\n"
        )
        pset = to_periodic_set(parse_cif(text))
        assert pset.m == 3
        assert sorted(pset.motif.species.tolist()) == [8, 8, 14]


class TestElements:
    """Test element symbol resolution."""

    @pytest.mark.parametrize("label, number", [
        ("Si", 14), ("Si1", 14), ("Fe2+", 26), ("O2-", 8), ("CL", 17), ("D", 1), ("T", 1), ("Te", 52),
    ])
    def test_known(self, label, number):
        assert element_number(label) == number

    @pytest.mark.parametrize("label", ["Qq", "1", "", "X"])
    def test_unknown(self, label):
        with pytest.raises(UnknownElement):
            element_number(label)

    def test_type_symbol_must_name_an_element(self):
        """Unknown two-letter type symbols are not read as their first letter."""
        with pytest.raises(UnknownElement):
            element_number("Sx")
        with pytest.raises(UnknownElement):
            element_number("Oq2-")

    @pytest.mark.parametrize("label, number", [("Ow1", 8), ("Sx1", 16), ("Si1", 14), ("Ca2", 20)])
    def test_site_label_falls_back_to_first_letter(self, label, number):
        assert element_number(label, site_label=True) == number


class TestConversion:
    """Test building periodic sets from blocks."""

    def test_minimal(self, minimal_cif):
        pset = to_periodic_set(parse_cif(minimal_cif))
        assert pset.id == "si"
        assert pset.m == 1
        assert pset.basis.volume == pytest.approx(64.0)
        assert pset.motif.species.tolist() == [14]

    def test_missing_cell_tag(self, minimal_cif):
        text = minimal_cif.replace("_cell_length_b 4\n", "")
        with pytest.raises(MissingTag):
            to_periodic_set(parse_cif(text))

    def test_missing_coordinates(self):
        text = "data_x\n" + CELL + "loop_\n_atom_site_label\n_atom_site_fract_x\nSi1 0\n"
        with pytest.raises(MissingTag) as exc:
            to_periodic_set(parse_cif(text))
        assert exc.value.tag == "_atom_site_fract_y"

    def test_empty_motif(self):
        text = (
            "data_x\n" + CELL +
            "loop_\n_atom_site_label\n_atom_site_fract_x\n_atom_site_fract_y\n_atom_site_fract_z\n"
        )
        with pytest.raises(EmptyMotif):
            to_periodic_set(parse_cif(text))

    def test_unknown_type_symbol(self, minimal_cif):
        text = minimal_cif.replace("Si1 Si 0 0 0", "Sx1 Sx 0 0 0")
        with pytest.raises(UnknownElement):
            to_periodic_set(parse_cif(text))

    def test_labels_used_without_type_symbols(self):
        text = (
            "data_x\n" + CELL +
            "loop_\n_atom_site_label\n_atom_site_fract_x\n_atom_site_fract_y\n_atom_site_fract_z\n"
            "Ow1 0 0 0\n"
        )
        assert to_periodic_set(parse_cif(text)).motif.species.tolist() == [8]

    def test_flat_cell_rejected(self, minimal_cif):
        """Angles of 120, 120, 120 degrees give a cell of zero volume."""
        text = minimal_cif.replace("_cell_angle_alpha 90", "_cell_angle_alpha 120")
        text = text.replace("_cell_angle_beta 90", "_cell_angle_beta 120")
        text = text.replace("_cell_angle_gamma 90", "_cell_angle_gamma 120")
        with pytest.raises(DegenerateCell):
            to_periodic_set(parse_cif(text))

    def test_block_index(self, minimal_cif):
        with pytest.raises(InputError):
            to_periodic_set(parse_cif(minimal_cif), index=1)

    def test_read_cif_file(self, tmp_path, minimal_cif):
        path = tmp_path / "si.cif"
        path.write_text(minimal_cif)
        sets = read_cif(path)
        assert len(sets) == 1 and sets[0].id == "si"

    def test_read_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            read_cif(tmp_path / "absent.cif")


class TestWriter:
    """Test that written CIFs parse back to the same set."""

    def test_round_trip(self):
        for seed in range(100):
            pset = random_periodic_set(seed, 1 + seed % 8, 0.6)
            back = to_periodic_set(parse_cif(write_cif(pset)))
            gram = pset.basis.matrix @ pset.basis.matrix.T
            gram_back = back.basis.matrix @ back.basis.matrix.T
            np.testing.assert_allclose(gram_back, gram, atol=1e-9, rtol=0)
            np.testing.assert_allclose(back.motif.frac_coords, pset.motif.frac_coords,
                                       atol=1e-12, rtol=0)
            np.testing.assert_array_equal(back.motif.species, pset.motif.species)
            assert back.id == pset.id

    def test_block_name_sanitized(self, unit_cube):
        text = write_cif(PeriodicSet(unit_cube.basis, unit_cube.motif, id="my set"))
        assert text.startswith("data_my_set\n")


class TestFuzz:
    """The parser returns a document or raises CifSyntaxError on any input."""

    @given(st.binary(max_size=512))
    def test_arbitrary_bytes(self, data):
        try:
            parse_cif(data)
        except CifSyntaxError:
            pass

    @given(st.text(alphabet="data_loop_ '\";#\n\t0123456789.()xyz,-+/", max_size=256))
    def test_cif_like_text(self, text):
        try:
            parse_cif(text)
        except CifSyntaxError:
            pass

    @pytest.mark.slow
    def test_random_corpus(self):
        rng = np.random.default_rng(2024)
        for _ in range(10_000):
            data = rng.integers(0, 256, size=int(rng.integers(0, 200)), dtype=np.uint8).tobytes()
            try:
                parse_cif(data)
            except CifSyntaxError:
                pass
