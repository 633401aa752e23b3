"""Exception hierarchy shared across the package."""


class ShyCouplingError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(ShyCouplingError, ValueError):
    """Invalid domain construction (non-convex polygon, bad semi-axes...)."""


class NotOnBoundaryError(ShyCouplingError, ValueError):
    pass


class UnsupportedDimensionError(ShyCouplingError, ValueError):
    pass


class RTooSmallError(ShyCouplingError, ValueError):
    """Circle radius does not exceed diam(D) csc(phi)."""


class NotAContractionError(ShyCouplingError, ValueError):
    pass


class StrategyContractError(ShyCouplingError, RuntimeError):
    """A strategy produced drive matrices violating J^T J + K^T K = I."""


class DeltaTooLargeError(ShyCouplingError, ValueError):
    pass


class NoFeasibleDeltaError(ShyCouplingError, RuntimeError):
    pass


class CriterionRatioError(ShyCouplingError, RuntimeError):
    """Parallel-segment criterion ratio is not > 1 somewhere; R must grow."""


class SameSignError(ShyCouplingError, ValueError):
    pass


class WindowTooShortError(ShyCouplingError, ValueError):
    pass


class EnsembleError(ShyCouplingError, ValueError):
    """Replicas in an ensemble do not share a configuration."""


class ConfigError(ShyCouplingError, ValueError):
    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class PreconditionError(ShyCouplingError, ValueError):
    """Parameters outside the range where a construction is valid."""
