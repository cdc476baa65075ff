"""Exception types shared across the package."""


class PrefgeoError(Exception):
    """Base class for all package errors."""


class InvalidRegionError(PrefgeoError, ValueError):
    """Raised for degenerate or inconsistent region bounds."""


class DomainError(PrefgeoError, ValueError):
    """Raised when data fall outside the declared spatial domain."""


class ParameterError(PrefgeoError, ValueError):
    """Raised when a model parameter violates its domain."""


class DegenerateMatrixError(PrefgeoError, ValueError):
    """Raised when a matrix is structurally singular (e.g. duplicate points)."""


class NumericalError(PrefgeoError, RuntimeError):
    """Raised when a numerical procedure fails (factorization, divergence)."""


class DataSchemaError(PrefgeoError, ValueError):
    """Raised when an input file does not match the expected schema."""
