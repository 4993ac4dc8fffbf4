"""Exception hierarchy shared across the pipeline.

The CLI maps these onto process exit codes: ConfigError -> 1,
DataValidationError -> 2, ConvergenceError -> 3.
"""


class MatchDidError(Exception):
    """Base class for all package errors."""


class ConfigError(MatchDidError):
    """Bad configuration, preset, or command usage."""


class DataValidationError(MatchDidError):
    """Input data violates a documented contract (missing artifact,
    malformed file, out-of-range value, rank-deficient design)."""


class ConvergenceError(MatchDidError):
    """An iterative numerical procedure failed to converge or produced
    a non-positive-definite curvature matrix."""
