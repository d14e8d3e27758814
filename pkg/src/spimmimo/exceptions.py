"""Exception taxonomy shared across the package."""


class SpimError(Exception):
    """Base class for all package errors."""


class ConfigError(SpimError):
    """Invalid or inconsistent configuration. CLI exit code 2."""


class InvalidInputError(SpimError, ValueError):
    """Numerically invalid input (non-finite entries, zero matrix, ...)."""


class SingularMatrixError(SpimError):
    """Singular or ill-conditioned linear system.

    ``pattern_index`` carries the 1-based spatial-pattern index when the
    failure occurred while inverting a per-pattern effective channel.
    """

    def __init__(self, message: str, pattern_index: int | None = None):
        super().__init__(message)
        self.pattern_index = pattern_index


class DegenerateRetractionError(SpimError):
    """A retraction hit an exactly-zero entry and step halving ran out."""


class ShapeError(SpimError):
    """Tensor dimension mismatch; ``layer`` names the offending layer."""

    def __init__(self, message: str, layer: str | None = None):
        super().__init__(message)
        self.layer = layer


class FormatError(SpimError):
    """Malformed serialized file; ``offset`` is the byte position."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class ProtocolError(SpimError):
    """Federated round protocol violation (e.g. missing user gradient)."""


class EvaluationError(SpimError):
    """A metric could not be evaluated (e.g. no valid spatial pattern)."""
