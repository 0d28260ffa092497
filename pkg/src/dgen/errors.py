"""Exception hierarchy shared by all dgen modules.

The CLI maps these onto exit codes: usage errors exit 1, DataError exits 2,
NumericalError exits 3.
"""


class DgenError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(DgenError):
    """A caller violated an operation's stated precondition."""


class DimensionError(ContractError):
    """Shapes are incompatible for the requested operation."""


class DataError(DgenError):
    """Input data is malformed or unusable."""


class ParseError(DataError):
    """A data file could not be parsed. Carries the offending line number."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class EmptyInputError(DataError):
    """A dataset contained no usable records."""


class CannotAddError(DataError):
    """No candidate edges remain to insert into the graph."""


class NumericalError(DgenError):
    """A numerical computation left its valid domain."""


class DomainError(NumericalError):
    """An elementwise function was evaluated outside its domain."""


class DegenerateLabelsError(DgenError):
    """A training stage received labels with fewer than two classes."""
