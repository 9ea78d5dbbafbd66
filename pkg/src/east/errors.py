"""Exception taxonomy shared across the toolkit.

The CLI maps these to exit codes: anything validation-like exits 1,
numeric aborts exit 2 (see east.cli).
"""


class EastError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(EastError):
    """User-supplied data or configuration failed validation."""


class DimensionError(ValidationError):
    """Operand shapes are incompatible with the requested operation."""


class BatchTooSmallError(ValidationError):
    """The operation needs at least two samples per batch."""


class ConfigError(ValidationError):
    """Model or loss wiring is inconsistent with the configured dimensions."""


class StoreFormatError(ValidationError):
    """An embedding-store file violates the on-disk format."""


class ContractError(EastError):
    """An internal API precondition was violated, e.g. a non-scalar backward root."""


class NumericError(EastError):
    """A numeric invariant broke: non-finite values in a forward op or gradient."""
