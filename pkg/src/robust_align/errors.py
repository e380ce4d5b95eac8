"""Exception types shared across the package."""


class RobustAlignError(Exception):
    """Base class for all package-specific errors."""


class EnumerationCapExceeded(RobustAlignError):
    """The comparison-triple universe is larger than the configured cap."""


class InadmissibleRadius(RobustAlignError):
    """Uncertainty radius rho is not strictly below the oracle margin delta."""


class IntervalOutOfRange(RobustAlignError):
    """The perturbation interval [p*-rho, p*+rho] leaves [0, 1]."""


class InvalidEnvelopeParam(RobustAlignError):
    """Envelope parameter lambda_env is outside (0, 1/kappa)."""


class MaxInnerItersExceeded(RobustAlignError):
    """The prox inner loop hit its iteration cap before reaching the target residual."""

    def __init__(self, message, residual=None, point=None):
        super().__init__(message)
        self.residual = residual
        self.point = point


class NonFiniteIterate(RobustAlignError):
    """An optimizer iterate became NaN or infinite (stepsize misconfiguration)."""


class ConfigInvalid(RobustAlignError):
    """An experiment configuration failed validation."""
