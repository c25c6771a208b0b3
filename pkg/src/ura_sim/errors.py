"""Exception hierarchy shared by all modules."""


class UraSimError(Exception):
    """Base class for every error raised by ura_sim."""


class ConfigError(UraSimError, ValueError):
    """Invalid or inconsistent configuration."""


class EncodingError(UraSimError, ValueError):
    """Bit vectors or generator matrices with inconsistent dimensions."""


class SizeError(UraSimError, ValueError):
    """Requested object would be too large to materialize."""


class NumericalError(UraSimError, ArithmeticError):
    """Non-finite values or loss of positive definiteness."""

    def __init__(self, message, iteration=None, state=None):
        super().__init__(message)
        self.iteration = iteration
        self.state = state


class AnalysisError(UraSimError, ArithmeticError):
    """Fisher analysis cannot be completed (e.g. singular information)."""


class AggregationError(UraSimError, ValueError):
    """Monte Carlo runs that cannot be pooled together."""


class InfeasibleError(UraSimError):
    """Length allocation cannot satisfy the survivor-bound constraint."""

    def __init__(self, message, min_survivors=None, allocation=None):
        super().__init__(message)
        self.min_survivors = min_survivors
        self.allocation = allocation
