"""
Error hierarchy for the manifolds app.

Every error carries the exit code the management commands return for it:
2 for configuration problems, 3 for numerical failures, 4 for failed
validation suites.
"""

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_VALIDATION = 4


class ManifoldError(Exception):
    exit_code = EXIT_NUMERICAL


class ConfigError(ManifoldError):
    """Malformed, unknown or out-of-range run configuration."""
    exit_code = EXIT_CONFIG


class DomainError(ManifoldError, ValueError):
    """Argument outside the domain of a pure function."""


class DegenerateConstraintError(ManifoldError):
    """Constraint gradient matrix is numerically rank deficient."""

    def __init__(self, message, smin=None, smax=None):
        super().__init__(message)
        self.smin = smin
        self.smax = smax


class InvalidStateError(ManifoldError):
    """Starting point is not on the manifold or violates an inequality."""


class ScheduleError(ManifoldError):
    """Ball radii do not form a valid decreasing schedule."""


class NoValidRadiusError(ManifoldError):
    """The innermost-radius probe shrank below its floor."""


class StageFailureError(ManifoldError):
    """A ratio stage counted no samples in its inner ball."""

    def __init__(self, message, stage=None, diagnostics=None):
        super().__init__(message)
        self.stage = stage
        self.diagnostics = diagnostics or {}


class InnermostProjectionError(ManifoldError):
    """A projection from the innermost tangent disk failed."""


class DegenerateSeriesError(ManifoldError):
    """A series has zero variance so its correlation time is undefined."""


class ValidationFailure(ManifoldError):
    """One or more validation checks did not pass."""
    exit_code = EXIT_VALIDATION
