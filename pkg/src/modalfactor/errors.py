"""Exception and warning classes shared across the package."""


class ModalFactorError(Exception):
    """Base class for all package errors."""


class ConfigError(ModalFactorError, ValueError):
    """Invalid user-supplied configuration (factor count, level, spec fields)."""


class DataError(ModalFactorError, ValueError):
    """Malformed or unusable input data."""


class ShapeError(DataError):
    """Array dimensions do not agree."""


class InvalidBandwidthError(ConfigError):
    pass


class TransformError(DataError):
    pass


class NumericalError(ModalFactorError, ArithmeticError):
    """A computation produced degenerate or non-finite results."""


class DegenerateFactorsError(NumericalError):
    pass


class DiagnosticError(NumericalError):
    """A sanity precondition between fitted quantities failed."""


class DegeneracyWarning(RuntimeWarning):
    """Emitted when a numerical fallback (pseudoinverse, uniform weights) was used."""
