"""
Species embedding tables.

A table maps atomic numbers to fixed-width vectors. Tables are CSV files with
header ``element,dim_0,...,dim_{n-1}`` where ``element`` is a symbol or an
atomic number; they load from a local path or an http(s) URL. Without a table
the one-hot encoding of the atomic number (width 118) is used.
"""
import io
import logging
from pathlib import Path
from typing import Dict, Optional, Union

import httpx
import numpy as np
import pandas as pd
import structlog
from ase.data import atomic_numbers
from tenacity import (
    before_sleep_log,
    retry,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from shared.errors import InputError, MissingElement, UnknownElement


logger = structlog.get_logger()

N_ELEMENTS = 118


class EmbeddingTable:
    """
    Element id -> embedding vector lookup.
    """

    def __init__(self, vectors: Dict[int, np.ndarray], source: str = ""):
        if not vectors:
            raise InputError("embedding table is empty")
        widths = {v.shape[0] for v in vectors.values()}
        if len(widths) != 1:
            raise InputError(f"embedding rows have inconsistent widths {sorted(widths)}")
        self.dim = widths.pop()
        self.source = source
        self._vectors = {int(k): np.asarray(v, dtype=np.float64) for k, v in vectors.items()}

    def __contains__(self, species: int) -> bool:
        return int(species) in self._vectors

    def lookup(self, species: int) -> np.ndarray:
        if species not in self:
            raise MissingElement(int(species))
        return self._vectors[int(species)]

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, source: str = "") -> "EmbeddingTable":
        """Build a table from a frame with an ``element`` column and ``dim_*`` columns."""
        if "element" not in frame.columns:
            raise InputError("embedding table needs an 'element' column")
        dims = [c for c in frame.columns if c != "element"]
        if not dims:
            raise InputError("embedding table has no dimension columns")
        vectors = {}
        for element, values in zip(frame["element"], frame[dims].to_numpy(dtype=np.float64)):
            vectors[_element_id(element)] = values
        logger.info("Loaded embedding table", source=source, elements=len(vectors), dim=len(dims))
        return cls(vectors, source=source)

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "EmbeddingTable":
        frame = pd.read_csv(path)
        return cls.from_frame(frame, source=str(path))


def _element_id(element) -> int:
    text = str(element).strip()
    if text.isdigit():
        value = int(text)
        if 1 <= value <= N_ELEMENTS:
            return value
        raise UnknownElement(text)
    if text in atomic_numbers and atomic_numbers[text] >= 1:
        return atomic_numbers[text]
    raise UnknownElement(text)


class EmbeddingTableClient:
    """
    Fetches embedding tables published over HTTP.
    """

    def __init__(self, timeout: float = 30.0, transport: Optional[httpx.BaseTransport] = None):
        """
        Initialize the client.

        Args:
            timeout: Request timeout in seconds.
            transport: Optional httpx transport (tests inject a mock transport).
        """
        self.timeout = timeout
        self.client = httpx.Client(timeout=timeout, transport=transport)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()

    def close(self):
        """Close the HTTP client."""
        self.client.close()

    @retry(
        stop=stop_after_attempt(3),
        wait=wait_exponential(multiplier=1, min=2, max=10),
        retry=retry_if_exception_type((httpx.RequestError, httpx.TimeoutException)),
        before_sleep=before_sleep_log(logger, logging.INFO),
        reraise=True,
    )
    def fetch(self, url: str) -> EmbeddingTable:
        """
        Download and parse a CSV embedding table.

        Args:
            url: http(s) URL of the CSV file.

        Returns:
            The parsed EmbeddingTable.
        """
        logger.info("Fetching embedding table", url=url)
        try:
            response = self.client.get(url)
            response.raise_for_status()
        except httpx.HTTPStatusError as e:
            logger.error("Embedding table request failed",
                         status_code=e.response.status_code,
                         url=url)
            raise InputError(f"cannot fetch embedding table from {url}: HTTP {e.response.status_code}") from e
        frame = pd.read_csv(io.StringIO(response.text))
        return EmbeddingTable.from_frame(frame, source=url)


def load_embedding_table(
    source: Optional[str],
    timeout: float = 30.0,
    transport: Optional[httpx.BaseTransport] = None,
) -> Optional[EmbeddingTable]:
    """
    Load a table from a path or URL; ``None`` selects the one-hot fallback.
    """
    if not source:
        return None
    if source.startswith(("http://", "https://")):
        with EmbeddingTableClient(timeout=timeout, transport=transport) as client:
            try:
                return client.fetch(source)
            except httpx.RequestError as e:
                raise InputError(f"cannot reach {source}: {e}") from e
    if not Path(source).exists():
        raise InputError(f"embedding table {source} does not exist")
    return EmbeddingTable.from_csv(source)


def embedding_dim(table: Optional[EmbeddingTable]) -> int:
    return N_ELEMENTS if table is None else table.dim


def species_embedding(species: int, table: Optional[EmbeddingTable] = None) -> np.ndarray:
    """
    Embedding vector for one element.

    Args:
        species: Atomic number, 1..118.
        table: Loaded table, or None for the one-hot fallback.

    Returns:
        The table row, or a one-hot vector with 1.0 at index ``species - 1``.
    """
    if not 1 <= int(species) <= N_ELEMENTS:
        raise UnknownElement(str(species))
    if table is not None:
        return table.lookup(int(species))
    vector = np.zeros(N_ELEMENTS, dtype=np.float64)
    vector[int(species) - 1] = 1.0
    return vector


def species_matrix(species, table: Optional[EmbeddingTable] = None) -> np.ndarray:
    """Stack embeddings for a sequence of atomic numbers, one row each."""
    return np.stack([species_embedding(int(s), table) for s in species])
