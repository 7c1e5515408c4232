"""Exception hierarchy. The CLI maps each class onto an exit code."""


class CryoLocalError(Exception):
    """Base class for all package errors."""


class DataError(CryoLocalError, ValueError):
    """Inputs are inconsistent with each other (shapes, tilt counts, grids)."""


class FormatError(DataError):
    """A file on disk is malformed, truncated or of an unsupported kind."""


class NumericalError(CryoLocalError, ArithmeticError):
    """A computation is undefined for the given data (e.g. zero variance)."""
