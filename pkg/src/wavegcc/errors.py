"""Exception types raised across the package."""


class WaveGCCError(Exception):
    """Base class for all package errors."""


class InvalidInputError(WaveGCCError, ValueError):
    pass


class IntegrationError(WaveGCCError, RuntimeError):
    """RK4 step size underflow; ``last_time`` is the last time reached."""

    def __init__(self, message, last_time=0.0):
        super().__init__(message)
        self.last_time = last_time


class InvalidRegionError(WaveGCCError, ValueError):
    pass


class ConstructionError(WaveGCCError, RuntimeError):
    pass


class InconsistencyError(WaveGCCError, AssertionError):
    pass


class ResolutionError(WaveGCCError, ValueError):
    pass


class StabilityError(WaveGCCError, RuntimeError):
    pass


class EigensolverError(WaveGCCError, RuntimeError):
    def __init__(self, message, value=None, vector=None):
        super().__init__(message)
        self.value = value
        self.vector = vector


class IllConditionedError(WaveGCCError, RuntimeError):
    def __init__(self, message, lambda_min=None):
        super().__init__(message)
        self.lambda_min = lambda_min


class ConfigError(WaveGCCError, ValueError):
    pass
