"""Exception hierarchy shared by every module."""


class MagScatterError(Exception):
    """Base class for all package errors."""


class NumericalError(MagScatterError):
    """Numerical failure; the CLI maps these to exit code 3."""

    reason = "numerical"


class NonZeroMeanError(NumericalError):
    reason = "nonzero-mean"


class WraparoundError(NumericalError):
    reason = "wraparound"


class StabilityError(NumericalError):
    reason = "stability"


class NonConvergenceError(NumericalError):
    reason = "non-convergence"


class ZeroTimeError(NumericalError):
    reason = "zero-time"


class GridMismatchError(NumericalError):
    reason = "grid-mismatch"


class MeshMismatchError(NumericalError):
    reason = "mesh-mismatch"


class AnalyticVariantRequiredError(NumericalError):
    reason = "analytic-variant-required"


class InsufficientSamplesError(NumericalError):
    reason = "insufficient-samples"


class NonPositiveValueError(NumericalError):
    reason = "non-positive-value"


class ExponentRelationError(NumericalError):
    reason = "exponent-relation"


class ConfigError(MagScatterError):
    """Invalid experiment configuration; the CLI maps these to exit code 2."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message
