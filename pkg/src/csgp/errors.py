"""Exception types shared across the package."""


class CSGPError(Exception):
    """Base class for errors raised by this package."""


class DomainError(CSGPError, ValueError):
    """An action or context lies outside the supported domain."""


class NotPositiveDefinite(CSGPError, ValueError):
    """A covariance matrix failed Cholesky even after the jitter ladder."""


class SamplerError(CSGPError, RuntimeError):
    """The truncated-normal sampler could not produce a valid draw."""


class InfeasibleTruncation(SamplerError):
    """No feasible starting point exists for the truncation bounds."""


class SliceCollapse(SamplerError):
    """The elliptical slice bracket shrank past the allowed number of steps."""


class ConfigError(CSGPError, ValueError):
    """Invalid experiment configuration."""

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = ""
        if key is not None:
            where += f" [key: {key}"
            where += f", line {line}]" if line is not None else "]"
        super().__init__(message + where)
