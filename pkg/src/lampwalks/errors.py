"""Exception types shared across the package."""


class LampwalksError(Exception):
    """Base class for all package-specific errors."""


class ElementTypeMismatch(LampwalksError, TypeError):
    """Two measures (or a measure and an element) live over different groups."""


class TruncatedMeasureError(LampwalksError, ValueError):
    """An exact-only operation was asked to work on a measure with nonzero defect."""


class BudgetExceededError(LampwalksError, RuntimeError):
    """A support-size or enumeration budget would be exceeded.

    Raised *before* allocating, so callers can retry with a larger budget
    (see the WALK_BUDGET environment variable honoured by the CLI).
    """


class InvalidCouplingError(LampwalksError, ValueError):
    """A CouplingSpec entry is malformed or not allowed at the given index."""


class TauNotFoundError(LampwalksError, RuntimeError):
    """The swap stopping time did not occur within a path's horizon."""


class IntegerOverflowError(LampwalksError, OverflowError):
    """A lamp position or walker coordinate left the signed 64-bit range."""
