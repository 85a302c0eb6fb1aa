"""Exception types shared across the toolkit."""


class PopforestError(Exception):
    """Base class for all toolkit errors."""


class H1Violation(PopforestError):
    """The sublinear-increment condition f(x+y) - f(y) <= theta*x failed on the
    validation grid beyond tolerance."""


class NoSignStabilization(PopforestError):
    """No threshold could be found beyond which the interaction keeps a
    constant nonzero sign, and none was supplied."""


class ZeroCrossing(PopforestError):
    """The interaction vanishes inside the integration range, contradicting the
    constant-sign threshold of the model."""


class NoEntranceBoundary(PopforestError):
    """The tail of the return-time series does not saturate, so the descent
    potential is undefined."""


class H2Violation(PopforestError):
    """The drift is not eventually negative (or blows up at the origin), so the
    entrance-boundary test for the drifted Brownian motion does not apply."""


class ExplosionGuard(PopforestError):
    """Event count exceeded the safety cap; the model is probably mis-specified
    (runaway cooperative growth)."""


class CensoredInput(PopforestError):
    """An operation that needs a fully absorbed path received a censored one."""


class TooFewSamples(PopforestError):
    """Not enough samples for the requested statistical test."""


class InsufficientTail(PopforestError):
    """Not enough (or degenerate) tail points to estimate an exponential decay
    rate."""


class OrderingViolation(PopforestError):
    """Coupled replicas that should be pathwise ordered are not."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class ConfigError(PopforestError):
    """Experiment configuration could not be parsed or validated."""
