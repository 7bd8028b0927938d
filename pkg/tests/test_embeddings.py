"""
Tests for species embedding tables.
"""
import io

import httpx
import numpy as np
import pandas as pd
import pytest
from tenacity import wait_none

from shared.embeddings import (
    EmbeddingTable,
    EmbeddingTableClient,
    load_embedding_table,
    species_embedding,
    species_matrix,
)
from shared.errors import InputError, MissingElement, UnknownElement


TABLE_CSV = "element,dim_0,dim_1,dim_2\nH,0.1,0.2,0.3\n14,1.0,2.0,3.0\nO,-1,0,1\n"


@pytest.fixture
def table() -> EmbeddingTable:
    return EmbeddingTable.from_frame(pd.read_csv(io.StringIO(TABLE_CSV)))


@pytest.fixture
def no_retry_wait(monkeypatch):
    """Skip the back-off between retried requests."""
    monkeypatch.setattr(EmbeddingTableClient.fetch.retry, "wait", wait_none())


class TestSpeciesEmbedding:
    """Test lookups and the one-hot fallback."""

    def test_one_hot_fallback(self):
        """Silicon is a one-hot vector with the 1 at index 13."""
        vector = species_embedding(14)
        assert vector.shape == (118,)
        assert vector[13] == 1.0
        assert vector.sum() == 1.0

    def test_table_row(self, table):
        """Loaded tables return their own rows."""
        np.testing.assert_array_equal(species_embedding(14, table), [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(species_embedding(8, table), [-1.0, 0.0, 1.0])
        assert table.dim == 3

    def test_wide_table(self):
        """A 200-wide table gives 200-long vectors."""
        wide = EmbeddingTable({6: np.arange(200, dtype=float)})
        assert species_embedding(6, wide).shape == (200,)

    def test_missing_element(self, table):
        """Tables without the element raise MissingElement."""
        with pytest.raises(MissingElement) as exc:
            species_embedding(26, table)
        assert exc.value.species == 26

    @pytest.mark.parametrize("species", [0, 119])
    def test_out_of_range(self, species):
        with pytest.raises(UnknownElement):
            species_embedding(species)

    def test_matrix(self, table):
        matrix = species_matrix([1, 8, 14], table)
        assert matrix.shape == (3, 3)
        np.testing.assert_array_equal(matrix[0], [0.1, 0.2, 0.3])


class TestEmbeddingTable:
    """Test table construction."""

    def test_needs_element_column(self):
        with pytest.raises(InputError):
            EmbeddingTable.from_frame(pd.DataFrame({"z": [1], "dim_0": [0.0]}))

    def test_unknown_symbol(self):
        with pytest.raises(UnknownElement):
            EmbeddingTable.from_frame(pd.DataFrame({"element": ["Zz"], "dim_0": [0.0]}))

    def test_empty(self):
        with pytest.raises(InputError):
            EmbeddingTable({})

    def test_inconsistent_widths(self):
        with pytest.raises(InputError):
            EmbeddingTable({1: np.zeros(2), 2: np.zeros(3)})

    def test_load_from_path(self, tmp_path):
        path = tmp_path / "table.csv"
        path.write_text(TABLE_CSV)
        loaded = load_embedding_table(str(path))
        assert loaded.dim == 3 and 1 in loaded and 26 not in loaded

    def test_load_nothing(self):
        assert load_embedding_table(None) is None
        assert load_embedding_table("") is None

    def test_load_missing_path(self, tmp_path):
        with pytest.raises(InputError):
            load_embedding_table(str(tmp_path / "absent.csv"))


class TestEmbeddingTableClient:
    """Test fetching tables over HTTP with a mock transport."""

    def test_fetch(self):
        """A 200 response is parsed into a table."""
        seen = []

        def handler(request: httpx.Request) -> httpx.Response:
            seen.append(str(request.url))
            return httpx.Response(200, text=TABLE_CSV)

        loaded = load_embedding_table("https://tables.test/mat.csv", transport=httpx.MockTransport(handler))
        assert seen == ["https://tables.test/mat.csv"]
        assert loaded.source == "https://tables.test/mat.csv"
        np.testing.assert_array_equal(loaded.lookup(14), [1.0, 2.0, 3.0])

    def test_http_error(self):
        """Status errors are not retried and surface as InputError."""
        calls = []

        def handler(request: httpx.Request) -> httpx.Response:
            calls.append(request)
            return httpx.Response(404, text="not found")

        with pytest.raises(InputError, match="HTTP 404"):
            load_embedding_table("https://tables.test/missing.csv", transport=httpx.MockTransport(handler))
        assert len(calls) == 1

    def test_connection_retried(self, no_retry_wait):
        """Connection failures are retried three times, then reported."""
        calls = []

        def handler(request: httpx.Request) -> httpx.Response:
            calls.append(request)
            raise httpx.ConnectError("refused", request=request)

        with pytest.raises(InputError, match="cannot reach"):
            load_embedding_table("https://tables.test/mat.csv", transport=httpx.MockTransport(handler))
        assert len(calls) == 3

    def test_recovers_after_failure(self, no_retry_wait):
        """A transient failure followed by success returns the table."""
        calls = []

        def handler(request: httpx.Request) -> httpx.Response:
            calls.append(request)
            if len(calls) == 1:
                raise httpx.ReadTimeout("slow", request=request)
            return httpx.Response(200, text=TABLE_CSV)

        with EmbeddingTableClient(timeout=1.0, transport=httpx.MockTransport(handler)) as client:
            loaded = client.fetch("https://tables.test/mat.csv")
        assert loaded.dim == 3
        assert len(calls) == 2
