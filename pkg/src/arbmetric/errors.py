"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Vector or matrix shapes are inconsistent."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class MetricError(ValueError):
    """A user-supplied error metric returned an invalid value."""


class UnsupportedPriorError(TypeError):
    """The operation is not defined for the given prior family."""


class DegeneratePriorError(ValueError):
    """The prior has sparsity 0 or 1, so a support threshold does not exist."""


class ConfigError(ValueError):
    """An experiment configuration is malformed."""


class PrecisionWarning(UserWarning):
    """A quadrature did not converge to the requested relative accuracy."""


class GampDiverged(RuntimeError):
    """Raised when the GAMP residual blows up.

    The iteration trace and the last iterate are attached so callers can
    record the failure.
    """

    def __init__(self, message, trace, state=None):
        super().__init__(message)
        self.trace = trace
        self.state = state
