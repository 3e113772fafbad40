"""Exception hierarchy shared across the package."""


class CamseerError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(CamseerError):
    """A parameter is outside its admissible range."""


class TooShortInputError(CamseerError):
    """Input series is too short for the requested operation."""


class DataFormatError(CamseerError):
    """An input file violates the documented format."""


class InfeasibleError(CamseerError):
    """Requested construction cannot be satisfied by the available data."""


class NumericFailureError(CamseerError):
    """Non-finite values appeared during computation."""


class ContractViolationError(CamseerError):
    """Caller passed inputs violating an internal contract (e.g. shapes)."""
