"""
Exception hierarchy shared by all modules.

Every error derives from MultiAceError and from the builtin exception it
conceptually is, so callers may catch either.
"""


class MultiAceError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(MultiAceError, ValueError):
    """Invalid model, layer, radial or run configuration."""


class ShapeError(MultiAceError, ValueError):
    """Array layouts or weight shapes do not match."""


class CouplingError(MultiAceError, ValueError):
    """Invalid angular momentum coupling request (triangle violation)."""


class NormalizationError(MultiAceError, ValueError):
    """Input to the spherical harmonics is not a unit vector."""


class GeometryError(MultiAceError, ValueError):
    """A rotation matrix is not orthogonal or not proper."""


class DataError(MultiAceError, ValueError):
    """Invalid dataset content (unknown element, missing labels, ...)."""


class DomainError(MultiAceError, ArithmeticError):
    """A function was evaluated outside its domain."""


class ContactError(DataError, DomainError):
    """Two atoms are closer than the minimum distance guard."""


class ParseError(DataError):
    """Malformed input file."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class DataNormalizationError(MultiAceError, ValueError):
    """A data normalization scheme cannot be set up for the dataset."""


class SolverError(MultiAceError, ArithmeticError):
    """The least-squares system could not be solved."""


class DivergenceError(MultiAceError, RuntimeError):
    """Training produced a non-finite loss."""
