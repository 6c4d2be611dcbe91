"""Exception types shared across the package."""


class IntrodiffError(Exception):
    """Base class for all package errors."""


class ConfigurationError(IntrodiffError):
    """Invalid configuration: bad resolutions, missing layers, bad settings."""


class DomainError(IntrodiffError):
    """Value outside its mathematical or spatial domain (mask, sign, range)."""


class AlignmentError(IntrodiffError):
    """Raster header does not match the expected grid."""


class RasterParseError(IntrodiffError):
    """Malformed raster file (bad header or non-numeric cell)."""


class CoverageError(IntrodiffError):
    """Sample date not covered by the solved trajectory."""


class NumericalBlowupError(IntrodiffError):
    """Finite-difference state became non-finite during time stepping."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite state at time step {step}")
