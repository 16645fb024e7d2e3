"""Exception types shared across the package."""


class VolnormError(Exception):
    """Base class for all volnorm errors."""


class ValidationError(VolnormError, ValueError):
    """Invalid argument or inconsistent input objects."""


class DomainError(VolnormError, ValueError):
    """Numeric argument outside the mathematical domain of an operation."""


class SkewnessRangeError(DomainError):
    """Skewness at or beyond the admissible bound for the skew-normal family.

    Callers that must stay total (e.g. whole-volume fitting) are expected to
    clamp before converting; this error exists so that the clamp is an explicit
    decision rather than silent coercion.
    """


class GeometryError(ValidationError):
    """Volume dimensions or voxel sizes do not match between inputs."""


class DegenerateDataError(ValidationError):
    """Data carry no usable signal (e.g. a constant response vector)."""


class DesignError(ValidationError):
    """Design matrix unusable for fitting (rank deficient or too few rows)."""


class ConditioningError(VolnormError):
    """A linear system was too ill-conditioned to solve reliably."""

    def __init__(self, message: str, cond_estimate: float | None = None):
        super().__init__(message)
        self.cond_estimate = cond_estimate


class FormatError(VolnormError, ValueError):
    """Malformed file content: bad magic, truncation, or schema mismatch."""
