"""
Reader and writer for the CIF 1.1 subset needed to load periodic sets.

Supported syntax: ``data_`` headers, ``_tag value`` pairs, ``loop_`` tables,
single- and double-quoted strings, semicolon text fields and ``#`` comments.
Values are kept as raw strings; ``parse_number`` strips standard
uncertainties such as ``4.123(5)``.
"""
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
import structlog
from ase.data import atomic_numbers, chemical_symbols

from crystal.geometry import basis_to_cell_params, cell_params_to_basis
from shared.errors import CifSyntaxError, EmptyMotif, InputError, MissingTag, UnknownElement
from shared.types import Motif, PeriodicSet, wrap_fractional


logger = structlog.get_logger()

CELL_TAGS = (
    "_cell_length_a",
    "_cell_length_b",
    "_cell_length_c",
    "_cell_angle_alpha",
    "_cell_angle_beta",
    "_cell_angle_gamma",
)
FRACT_TAGS = ("_atom_site_fract_x", "_atom_site_fract_y", "_atom_site_fract_z")
SYMOP_TAGS = ("_symmetry_equiv_pos_as_xyz", "_space_group_symop_operation_xyz")

# Sites generated by symmetry closer than this (fractional, periodic) are one site.
SITE_MERGE_TOL = 1e-4

# Hydrogen isotopes written with their own symbols.
_ISOTOPES = {"D": 1, "T": 1}

_NUMBER = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)(?:\(\d+\))?$")


@dataclass
class CifLoop:
    """A ``loop_`` table: header tags and rectangular rows of raw values."""
    tags: List[str]
    rows: List[Tuple[str, ...]]
    line: int = 0

    def column(self, tag: str) -> List[str]:
        index = self.tags.index(tag.lower())
        return [row[index] for row in self.rows]


@dataclass
class CifBlock:
    """One ``data_`` block; tag names are stored lower-case."""
    name: str
    values: Dict[str, str] = field(default_factory=dict)
    loops: List[CifLoop] = field(default_factory=list)

    def tags(self) -> List[str]:
        names = list(self.values)
        for loop in self.loops:
            names.extend(loop.tags)
        return names

    def find_loop(self, tag: str) -> Optional[CifLoop]:
        tag = tag.lower()
        for loop in self.loops:
            if tag in loop.tags:
                return loop
        return None

    def column(self, tag: str) -> Optional[List[str]]:
        """Values of a tag, from a loop or as a one-element list; None if absent."""
        tag = tag.lower()
        if tag in self.values:
            return [self.values[tag]]
        loop = self.find_loop(tag)
        return None if loop is None else loop.column(tag)

    def number(self, tag: str) -> float:
        """Numeric value of a non-looped tag."""
        tag = tag.lower()
        if tag not in self.values:
            raise MissingTag(tag)
        return parse_number(self.values[tag], tag)


@dataclass
class CifDocument:
    blocks: List[CifBlock]
    source: str = ""


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    column: int


_DATA, _LOOP, _TAG, _VALUE = "data", "loop", "tag", "value"


def parse_number(text: str, tag: str = "") -> float:
    """
    Parse a CIF number, dropping a parenthesized standard uncertainty.

    Raises:
        InputError: If the text is not numeric (including ``?`` and ``.``).
    """
    match = _NUMBER.match(text.strip())
    if not match:
        where = f" for {tag}" if tag else ""
        raise InputError(f"expected a number{where}, got {text!r}")
    return float(match.group(1))


def _scan_line(line: str, lineno: int, start: int) -> Iterator[_Token]:
    pos = start
    n = len(line)
    while pos < n:
        ch = line[pos]
        if ch.isspace():
            pos += 1
            continue
        if ch == "#":
            return
        column = pos + 1
        if ch in "'\"":
            end = pos + 1
            while True:
                end = line.find(ch, end)
                if end < 0:
                    raise CifSyntaxError("unterminated quoted string", lineno, column)
                if end + 1 == n or line[end + 1].isspace():
                    break
                end += 1
            yield _Token(_VALUE, line[pos + 1:end], lineno, column)
            pos = end + 1
            continue
        end = pos
        while end < n and not line[end].isspace():
            end += 1
        word = line[pos:end]
        lower = word.lower()
        if lower.startswith("data_"):
            if len(word) == 5:
                raise CifSyntaxError("data block has no name", lineno, column)
            yield _Token(_DATA, word[5:], lineno, column)
        elif lower == "loop_":
            yield _Token(_LOOP, word, lineno, column)
        elif lower.startswith(("save_", "global_", "stop_")):
            raise CifSyntaxError(f"unsupported reserved word {word!r}", lineno, column)
        elif word.startswith("_"):
            yield _Token(_TAG, lower, lineno, column)
        else:
            yield _Token(_VALUE, word, lineno, column)
        pos = end


def _tokenize(text: str) -> Iterator[_Token]:
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i]
        start = 0
        if line.startswith(";"):
            opened = i + 1
            parts = [line[1:]]
            i += 1
            while i < len(lines) and not lines[i].startswith(";"):
                parts.append(lines[i])
                i += 1
            if i == len(lines):
                raise CifSyntaxError("unterminated text field", opened, 1)
            yield _Token(_VALUE, "\n".join(parts).strip("\n"), opened, 1)
            line = lines[i]
            start = 1
        yield from _scan_line(line, i + 1, start)
        i += 1


def _decode(data: Union[str, bytes]) -> str:
    if isinstance(data, str):
        return data
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as e:
        line = data.count(b"\n", 0, e.start) + 1
        column = e.start - (data.rfind(b"\n", 0, e.start) + 1) + 1
        raise CifSyntaxError("input is not valid UTF-8", line, column) from e


def parse_cif(text: Union[str, bytes], source: str = "") -> CifDocument:
    """
    Parse CIF text into data blocks.

    Args:
        text: CIF contents; bytes are decoded as UTF-8.
        source: Path or label recorded on the document.

    Returns:
        CifDocument with at least one block.

    Raises:
        CifSyntaxError: For malformed input, with the line and column.
    """
    tokens = list(_tokenize(_decode(text)))
    blocks: List[CifBlock] = []
    block: Optional[CifBlock] = None
    seen: set = set()
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if token.kind == _DATA:
            block = CifBlock(name=token.text)
            blocks.append(block)
            seen = set()
            i += 1
            continue
        if block is None:
            raise CifSyntaxError("content before the first data_ block", token.line, token.column)

        if token.kind == _TAG:
            if i + 1 >= len(tokens) or tokens[i + 1].kind != _VALUE:
                raise CifSyntaxError(f"tag {token.text} has no value", token.line, token.column)
            if token.text in seen:
                raise CifSyntaxError(f"duplicate tag {token.text}", token.line, token.column)
            seen.add(token.text)
            block.values[token.text] = tokens[i + 1].text
            i += 2
        elif token.kind == _LOOP:
            i += 1
            tags = []
            while i < len(tokens) and tokens[i].kind == _TAG:
                if tokens[i].text in seen:
                    raise CifSyntaxError(
                        f"duplicate tag {tokens[i].text}", tokens[i].line, tokens[i].column
                    )
                seen.add(tokens[i].text)
                tags.append(tokens[i].text)
                i += 1
            if not tags:
                raise CifSyntaxError("loop_ without tags", token.line, token.column)
            values = []
            while i < len(tokens) and tokens[i].kind == _VALUE:
                values.append(tokens[i].text)
                i += 1
            if len(values) % len(tags):
                raise CifSyntaxError(
                    f"loop with {len(tags)} tags holds {len(values)} values",
                    token.line,
                    token.column,
                )
            rows = [tuple(values[j:j + len(tags)]) for j in range(0, len(values), len(tags))]
            block.loops.append(CifLoop(tags=tags, rows=rows, line=token.line))
        else:
            raise CifSyntaxError(f"value {token.text!r} without a tag", token.line, token.column)

    if not blocks:
        raise CifSyntaxError("no data block found", 1, 1)
    return CifDocument(blocks=blocks, source=source)


def parse_symop(text: str) -> Tuple[np.ndarray, np.ndarray]:
    """
    Parse an operator such as ``-y+1/2, x, z`` into (rotation, translation).

    Coefficients and shifts are read as exact fractions, then converted.
    """
    parts = text.strip().strip("'\"").lower().replace(" ", "").split(",")
    if len(parts) != 3:
        raise InputError(f"symmetry operator {text!r} needs three components")
    rotation = [[Fraction(0)] * 3 for _ in range(3)]
    translation = [Fraction(0)] * 3
    for row, expr in enumerate(parts):
        terms = re.findall(r"[+-]?[^+-]+", expr)
        if not terms or "".join(terms) != expr:
            raise InputError(f"cannot parse symmetry operator {text!r}")
        for term in terms:
            sign = -1 if term[0] == "-" else 1
            body = term.lstrip("+-")
            try:
                if body and body[-1] in "xyz":
                    coefficient = body[:-1].rstrip("*")
                    axis = "xyz".index(body[-1])
                    rotation[row][axis] += sign * (Fraction(coefficient) if coefficient else 1)
                else:
                    translation[row] += sign * Fraction(body)
            except (ValueError, ZeroDivisionError) as e:
                raise InputError(f"cannot parse symmetry operator {text!r}") from e
    return (
        np.array([[float(v) for v in row] for row in rotation]),
        np.array([float(v) for v in translation]),
    )


def element_number(label: str, site_label: bool = False) -> int:
    """
    Atomic number from a type symbol such as ``Fe2+`` or a site label such as ``Si1``.

    Site labels are free-form names, so an unknown two-letter prefix falls back
    to its first letter (``Ow1`` is oxygen). Type symbols must name an element.
    """
    match = re.match(r"[A-Za-z]{1,2}", label.strip())
    if not match:
        raise UnknownElement(label)
    letters = match.group(0)
    candidates = [letters[0].upper() + letters[1:].lower()]
    if site_label and len(letters) == 2:
        candidates.append(letters[0].upper())
    for symbol in candidates:
        if symbol in _ISOTOPES:
            return _ISOTOPES[symbol]
        if atomic_numbers.get(symbol, 0) >= 1:
            return atomic_numbers[symbol]
    raise UnknownElement(label)


def _merge_sites(frac: np.ndarray, species: np.ndarray, tol: float) -> Tuple[np.ndarray, np.ndarray]:
    kept: List[int] = []
    for i in range(len(frac)):
        if kept:
            diff = frac[kept] - frac[i]
            diff -= np.round(diff)
            close = np.abs(diff).max(axis=1) <= tol
            if close.any():
                other = kept[int(np.argmax(close))]
                if species[other] != species[i]:
                    logger.warning("Sites of different species coincide",
                                   kept=int(species[other]), dropped=int(species[i]))
                continue
        kept.append(i)
    return frac[kept], species[kept]


def expand_symmetry(
    frac: np.ndarray,
    species: np.ndarray,
    operators: List[Tuple[np.ndarray, np.ndarray]],
    tol: float = SITE_MERGE_TOL,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Apply every operator to every site and merge coinciding images.

    Images are ordered site by site, operator by operator; the first image of
    a group of coinciding ones is kept.
    """
    images = []
    labels = []
    for site, z in zip(frac, species):
        for rotation, translation in operators:
            images.append(rotation @ site + translation)
            labels.append(z)
    return _merge_sites(wrap_fractional(np.array(images)), np.array(labels, dtype=np.int64), tol)


def block_to_periodic_set(block: CifBlock) -> PeriodicSet:
    """
    Convert one data block to a PeriodicSet.

    Raises:
        MissingTag: If a cell tag or fractional coordinate column is missing.
        UnknownElement: If a site's element cannot be resolved.
        EmptyMotif: If the block lists no sites.
    """
    basis = cell_params_to_basis(*(block.number(tag) for tag in CELL_TAGS))

    columns = []
    for tag in FRACT_TAGS:
        column = block.column(tag)
        if column is None:
            raise MissingTag(tag)
        columns.append(column)
    labels = block.column("_atom_site_type_symbol")
    site_label = not labels
    if site_label:
        labels = block.column("_atom_site_label")
    if labels is None:
        raise MissingTag("_atom_site_type_symbol")
    if not columns[0]:
        raise EmptyMotif(f"block {block.name} lists no atom sites")
    if len({len(column) for column in columns} | {len(labels)}) != 1:
        raise InputError(f"block {block.name} has atom site columns of different lengths")

    frac = np.array(
        [[parse_number(v, tag) for v in column] for tag, column in zip(FRACT_TAGS, columns)]
    ).T
    species = np.array([element_number(label, site_label) for label in labels], dtype=np.int64)

    for tag in SYMOP_TAGS:
        ops = block.column(tag)
        if ops:
            operators = [parse_symop(op) for op in ops]
            sites = len(frac)
            frac, species = expand_symmetry(frac, species, operators)
            logger.debug("Expanded symmetry", block=block.name, operators=len(operators),
                         sites=sites, points=len(frac))
            break

    return PeriodicSet(basis=basis, motif=Motif(frac, species), id=block.name)


def to_periodic_set(doc: CifDocument, index: int = 0) -> PeriodicSet:
    """Convert the ``index``-th data block of a parsed document."""
    if not 0 <= index < len(doc.blocks):
        raise InputError(f"document has {len(doc.blocks)} blocks, asked for {index}")
    return block_to_periodic_set(doc.blocks[index])


def read_cif(path: Union[str, Path]) -> List[PeriodicSet]:
    """
    Load every data block of a CIF file.

    Args:
        path: File path.

    Returns:
        One PeriodicSet per block, ids taken from the block names.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from e
    doc = parse_cif(data, source=str(path))
    sets = [block_to_periodic_set(block) for block in doc.blocks]
    logger.debug("Read CIF", path=str(path), blocks=len(sets))
    return sets


def _block_name(label: str) -> str:
    name = re.sub(r"[^\x21-\x7e]", "_", label)
    return name or "structure"


def write_cif(pset: PeriodicSet) -> str:
    """
    Render a set as a P1 CIF with 17 significant digits.
    """
    params = basis_to_cell_params(pset.basis)
    lines = [f"data_{_block_name(pset.id)}"]
    for tag, value in zip(CELL_TAGS, params):
        lines.append(f"{tag} {value:.17g}")
    lines += [
        "_symmetry_space_group_name_H-M 'P 1'",
        "_symmetry_Int_Tables_number 1",
        "loop_",
        "_symmetry_equiv_pos_as_xyz",
        "'x, y, z'",
        "loop_",
        "_atom_site_label",
        "_atom_site_type_symbol",
        "_atom_site_fract_x",
        "_atom_site_fract_y",
        "_atom_site_fract_z",
    ]
    for i, (site, z) in enumerate(zip(pset.motif.frac_coords, pset.motif.species)):
        symbol = chemical_symbols[int(z)]
        coords = " ".join(f"{x:.17g}" for x in site)
        lines.append(f"{symbol}{i + 1} {symbol} {coords}")
    return "\n".join(lines) + "\n"
