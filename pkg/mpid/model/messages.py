from dataclasses import dataclass

import numpy as np

from ..helpers.errors import ConfigError, NonInformativeObservation


@dataclass(frozen=True)
class GaussianMessage:
    """
    Gaussian message in mean / precision form.

    Precision 0 encodes infinite variance. Fields may be scalars or arrays of
    equal shape, in which case every operation acts elementwise.
    """
    mean: float
    precision: float

    def __post_init__(self):
        precision = np.asarray(self.precision, dtype=float)
        mean = np.asarray(self.mean, dtype=float)
        if not np.all(np.isfinite(precision)) or np.any(precision < 0):
            raise ConfigError("message precision must be finite and nonnegative.")
        mean, precision = np.broadcast_arrays(mean, precision)
        if not np.all(np.isfinite(mean[precision > 0])):
            raise ConfigError("message mean must be finite where precision is positive.")

    @classmethod
    def from_moments(cls, mean, var):
        """Builds a message from mean and variance; var may be np.inf."""
        var = np.asarray(var, dtype=float)
        if np.any(var <= 0) or np.any(np.isnan(var)):
            raise ConfigError("variance must be positive.")
        with np.errstate(divide="ignore"):
            precision = np.where(np.isinf(var), 0.0, 1.0 / var)
        return cls(mean=_unwrap(mean), precision=_unwrap(precision))

    @property
    def var(self):
        """Variance, np.inf where the precision is 0. For reporting only."""
        precision = np.asarray(self.precision, dtype=float)
        with np.errstate(divide="ignore"):
            return _unwrap(np.where(precision > 0, 1.0 / precision, np.inf))


def _unwrap(value):
    value = np.asarray(value, dtype=float)
    return float(value) if value.ndim == 0 else value


def combine_extrinsic(posterior, prior):
    """
    Removes the prior from a posterior (Gaussian division).

    Returns the extrinsic message with precision p_post - p_prior and
    mean / var equal to x_post / v_post - x_prior / v_prior.

    Parameters
    ----------
    posterior: GaussianMessage
        Belief that includes the prior.
    prior: GaussianMessage
        The prior to remove.

    Returns
    -------
    GaussianMessage
        Extrinsic message.

    Raises
    ------
    NonInformativeObservation
        If the posterior precision does not strictly exceed the prior's.
    """
    p_post = np.asarray(posterior.precision, dtype=float)
    p_prior = np.asarray(prior.precision, dtype=float)
    if np.any(p_post <= p_prior):
        raise NonInformativeObservation(
            "posterior precision must exceed prior precision for an extrinsic message to exist.")

    precision = p_post - p_prior
    mean = (p_post * np.asarray(posterior.mean) - p_prior * np.asarray(prior.mean)) / precision
    return GaussianMessage(mean=_unwrap(mean), precision=_unwrap(precision))


def gaussian_product(a, b):
    """Combines two independent Gaussian messages; inverse of combine_extrinsic."""
    p_a = np.asarray(a.precision, dtype=float)
    p_b = np.asarray(b.precision, dtype=float)
    precision = p_a + p_b
    weighted = p_a * np.asarray(a.mean) + p_b * np.asarray(b.mean)
    mean = np.divide(weighted, precision, out=np.zeros(np.broadcast(weighted, precision).shape), where=precision > 0)
    return GaussianMessage(mean=_unwrap(mean), precision=_unwrap(precision))


def mse(estimate, x_true):
    """
    Mean squared error (1 / N) sum_k (estimate_k - x_true_k)^2.

    Raises
    ------
    ConfigError
        On a length mismatch.
    """
    estimate = np.asarray(estimate, dtype=float)
    x_true = np.asarray(x_true, dtype=float)
    if estimate.shape != x_true.shape:
        raise ConfigError(f"length mismatch: {estimate.shape} vs {x_true.shape}.")
    diff = estimate - x_true
    return float(np.mean(diff * diff))
