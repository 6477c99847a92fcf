class MpidError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(MpidError, ValueError):
    """Invalid configuration, spec file, or inconsistent dimensions."""


class NumericalFault(MpidError, ArithmeticError):
    """A quantity that must be finite and positive was not."""


class NonInformativeObservation(NumericalFault):
    """The observation adds no precision, so the extrinsic message is undefined."""


class RelaxationWindowError(ConfigError):
    """Relaxation parameter outside the convergence window 0 < w < 2/lambda_max."""


class SpectralConvergenceError(NumericalFault):
    """Power iteration did not converge and no dense fallback was allowed."""
