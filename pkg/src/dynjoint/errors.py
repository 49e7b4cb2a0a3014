"""Exception types raised across the package."""


class DynJointError(Exception):
    """Base class for all package errors."""


class FactorizationFailure(DynJointError):
    """A covariance or precision matrix could not be Cholesky-factorized."""


class SamplerStall(DynJointError):
    """A rejection sampler exceeded its proposal budget."""


class IndexOutOfRange(DynJointError, IndexError):
    pass


class GridMismatch(DynJointError):
    pass


class DegenerateLabels(DynJointError, ValueError):
    """AUC requested with only one class present."""


class ShapeMismatch(DynJointError, ValueError):
    pass


class ConfigError(DynJointError):
    pass


class DataError(DynJointError):
    """Malformed input records; carries the offending line number if known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class KeyMismatch(DataError):
    pass


class VersionError(DataError):
    """Archive header has the wrong magic bytes or an unsupported version."""


class RankDeficiencyWarning(UserWarning):
    pass


class SweepError(DynJointError):
    """Wraps a numerical failure inside the Gibbs loop with its sweep index."""

    def __init__(self, sweep, cause):
        super().__init__(f"sweep {sweep}: {type(cause).__name__}: {cause}")
        self.sweep = sweep
        self.cause = cause


class IoError(DynJointError, OSError):
    """A required file or directory is missing or unreadable."""
