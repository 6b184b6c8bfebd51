"""Exception types shared across the package."""


class NuisregError(Exception):
    pass


class ShapeError(NuisregError, ValueError):
    pass


class CovarianceNotSPDError(NuisregError, ValueError):
    """A covariance block failed the positive-definiteness check."""

    def __init__(self, message, group=None):
        super().__init__(message)
        self.group = group


class ParameterRangeError(NuisregError, ValueError):
    pass


class EmptyGroupError(NuisregError, ValueError):
    pass


class BudgetExceededError(NuisregError, RuntimeError):
    """Support enumeration would exceed the configured budget."""


class RankError(NuisregError, ValueError):
    pass


class QuadratureError(NuisregError, RuntimeError):
    pass


class NumericalFailure(NuisregError, RuntimeError):
    pass


class ConfigError(NuisregError, ValueError):
    """Experiment configuration is malformed or infeasible."""
