"""
Exception hierarchy for pddkit.

Input problems are ValueErrors with exit code 2, numerical failures are
ArithmeticErrors with exit code 3. The CLI maps ``exit_code`` straight to the
process exit status.
"""
from typing import Iterable, Optional


class PddkitError(Exception):
    """Base class for every error raised by pddkit."""

    exit_code = 1


class InputError(PddkitError, ValueError):
    """Invalid input data or arguments."""

    exit_code = 2


class NumericalError(PddkitError, ArithmeticError):
    """A computation failed to produce a finite or feasible result."""

    exit_code = 3


class DegenerateCell(InputError):
    """Cell parameters or basis describe a zero or negative volume."""


class SupercellOverflow(InputError):
    """Replicated motif would exceed the configured point budget."""

    def __init__(self, points: int, limit: int):
        self.points = points
        self.limit = limit
        super().__init__(f"supercell would hold {points} points, limit is {limit}")


class CifSyntaxError(InputError):
    """Malformed CIF text."""

    def __init__(self, message: str, line: int, column: int = 1):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


class MissingTag(InputError):
    """A required CIF tag is absent."""

    def __init__(self, tag: str):
        self.tag = tag
        super().__init__(f"missing required tag {tag}")


class UnknownElement(InputError):
    """An element symbol could not be resolved to an atomic number."""

    def __init__(self, symbol: str):
        self.symbol = symbol
        super().__init__(f"unknown element symbol {symbol!r}")


class EmptyMotif(InputError):
    """A structure has no atoms."""


class LengthMismatch(InputError):
    """Two rows compared by a ground metric have different lengths."""


class KMismatch(InputError):
    """Two PDDs were computed with different k."""

    def __init__(self, k_a: int, k_b: int):
        self.k_a = k_a
        self.k_b = k_b
        super().__init__(f"PDDs have different k: {k_a} vs {k_b}")


class ShapeMismatch(InputError):
    """Tensor shapes are inconsistent with the model configuration."""


class AllZeroWeights(InputError):
    """A weighted softmax received no positive weight."""


class NotSymmetric(InputError):
    """A distance matrix is not symmetric or has a non-zero diagonal."""


class NegativeDistance(InputError):
    """A distance matrix contains a negative entry."""


class EmptyDataset(InputError):
    """Training was requested on an empty dataset."""


class MissingElement(InputError):
    """A loaded embedding table has no row for an element."""

    def __init__(self, species: int):
        self.species = species
        super().__init__(f"embedding table has no row for element {species}")


class MissingTargets(InputError):
    """Structures without a target value in the targets file."""

    def __init__(self, ids: Iterable[str]):
        self.ids = sorted(ids)
        super().__init__("missing targets for: " + ", ".join(self.ids))


class GenerationFailed(NumericalError):
    """Rejection sampling could not place every motif point."""

    def __init__(self, attempts: int, placed: int, wanted: int):
        self.attempts = attempts
        super().__init__(
            f"placed {placed}/{wanted} points after {attempts} attempts"
        )


class NonFiniteActivation(NumericalError):
    """A forward pass produced NaN or inf."""

    def __init__(self, layer: int):
        self.layer = layer
        super().__init__(f"non-finite activation after layer {layer}")


class NonFiniteLoss(NumericalError):
    """Training loss became NaN or inf."""

    def __init__(self, epoch: int, batch: Optional[int] = None):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
