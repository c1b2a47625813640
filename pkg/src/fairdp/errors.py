"""Semantic exception hierarchy.

Every error raised by this package derives from :class:`FairdpError`, so
callers can catch one type at the CLI boundary and still get precise
classes for programmatic handling.
"""


class FairdpError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(FairdpError):
    """A scalar argument is outside its documented domain."""


class DimensionMismatchError(FairdpError):
    """Vector/matrix operands have incompatible shapes."""


class SchemaError(FairdpError):
    """A dataset file does not match the declared column schema."""


class DataDomainError(FairdpError):
    """A dataset value is outside its allowed domain (e.g. non-binary label)."""


class DataFormatError(FairdpError):
    """A dataset file is malformed (empty, unparseable)."""


class DegenerateGroupError(FairdpError):
    """A protected group (or attribute combination) has no members."""


class EmptyEventError(FairdpError):
    """A conditioning event selects no rows for some group."""


class ContractViolationError(FairdpError):
    """An internal precondition was violated (e.g. unclipped gradient)."""


class CalibrationError(FairdpError):
    """The noise calibration search could not reach the target budget."""


class DivergenceError(FairdpError):
    """Iterates blew up during optimization."""


class TrainingError(FairdpError):
    """Training aborted (non-finite parameters or invalid state)."""
