"""Exception types shared across the package.

The CLI maps these onto stable exit codes (see ``EXIT_CODES``).
"""


class DdmheError(Exception):
    """Base class for all package errors."""


class InvalidInputError(DdmheError, ValueError):
    """Non-finite entries, wrong shapes, negative scales."""


class BoundsError(DdmheError, IndexError):
    """A 1-based index falls outside the matrix or dataset."""


class AssumptionViolation(DdmheError):
    """A modelling assumption (observability, excitation, horizon length) fails."""


class DegeneracyError(DdmheError):
    """A numerical rank condition needed by a fit or solve fails."""


class DomainError(DdmheError, ValueError):
    """A bound formula is evaluated outside its domain (e.g. eps >= eps0)."""


class ParseError(DdmheError, ValueError):
    """A text file does not follow the documented format."""


class IntegrityError(DdmheError, ValueError):
    """A file header disagrees with the data that follows it."""


class StateError(DdmheError):
    """An estimator is stepped before its windows are full."""


EXIT_CODES = {
    AssumptionViolation: 2,
    DegeneracyError: 3,
    DomainError: 4,
}


def exit_code_for(exc: BaseException) -> int:
    for cls, code in EXIT_CODES.items():
        if isinstance(exc, cls):
            return code
    return 1
