"""Exception types shared across the toolkit."""


class ReckitError(Exception):
    """Base class for all toolkit errors."""


class ParseError(ReckitError):
    """Malformed input file; carries the offending line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimensionError(ReckitError):
    """Dimension constraints violated (d <= n-2 and friends)."""


class ResolutionError(ReckitError):
    """Requested scale falls below the atomic resolution floor."""


class DomainError(ReckitError):
    """Argument outside the operation's domain."""


class DegenerateError(ReckitError):
    """Empty ball, vanishing density, or rank-deficient data."""


class NumericError(ReckitError):
    """Quadrature or solver failure."""


class SizeError(ReckitError):
    """Problem size exceeds a configured cap."""


class PreconditionError(ReckitError):
    """A documented precondition failed; message names the offender."""


class ConfigError(ReckitError):
    """Invalid run configuration."""


class StagingError(ReckitError):
    """Pipeline stage invoked before its predecessors produced their dumps."""
