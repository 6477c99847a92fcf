import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular

from ..helpers.counting import MulCounter
from ..helpers.errors import ConfigError, NumericalFault
from ..model.messages import GaussianMessage, combine_extrinsic
from ..model.system import PriorBelief, check_dimensions

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LmmseResult:
    """
    Output of the LMMSE detector.

    ``posterior_var`` is the diagonal of the posterior covariance. The
    extrinsic pair is what the per-user decoders would receive.
    """
    posterior_mean: np.ndarray
    posterior_var: np.ndarray
    mul_count: int
    prior: PriorBelief = field(repr=False)

    @cached_property
    def _extrinsic(self):
        message = combine_extrinsic(
            GaussianMessage.from_moments(self.posterior_mean, self.posterior_var),
            GaussianMessage.from_moments(self.prior.mean, self.prior.var),
        )
        return np.atleast_1d(message.mean), np.atleast_1d(message.var)

    @property
    def extrinsic_mean(self):
        return self._extrinsic[0]

    @property
    def extrinsic_var(self):
        return self._extrinsic[1]


def lmmse_mul_count(n_users, n_antennas):
    """
    Real multiplications of the factorisation and solve path.

    Gram (symmetric half), H^T y, prior term, Cholesky, two triangular
    solves, and the diagonal of the inverse.
    """
    n_u, n_r = int(n_users), int(n_antennas)
    return (
        n_u * n_r * (n_u + 1) // 2
        + n_u * n_r
        + n_u
        + n_u ** 3 // 6
        + 2 * n_u ** 2
        + n_u ** 3 // 6
        + n_u ** 2
    )


def lmmse_detect(ch, obs, prior, noise_var):
    """
    Exact LMMSE detection with a Gaussian prior.

    Solves (H^T H + sigma_n^2 V^-1) x = H^T y + sigma_n^2 V^-1 x_prior by a
    Cholesky factorisation; the posterior covariance is sigma_n^2 times the
    inverse of that matrix, of which only the diagonal is formed.

    Parameters
    ----------
    ch: ChannelInstance
        Channel matrix H (N_r x N_u).
    obs: Observation
        Received vector y.
    prior: PriorBelief
        Prior means and variances per user.
    noise_var: float
        Noise variance sigma_n^2, must be positive.

    Returns
    -------
    LmmseResult
        Posterior means, posterior variances and the multiplication count.
    """
    check_dimensions(ch, obs, prior)
    if not noise_var > 0:
        raise ConfigError(f"noise_var must be positive, got {noise_var}.")

    h = ch.h
    n_r, n_u = h.shape
    counter = MulCounter()

    system = h.T @ h # symmetric; only one half is needed
    counter.add(n_u * n_r * (n_u + 1) // 2)
    system[np.diag_indices(n_u)] += noise_var * prior.precision

    rhs = h.T @ obs.y + noise_var * prior.mean * prior.precision
    counter.add(n_u * n_r + n_u)

    try:
        factor = cho_factor(system, lower=True, check_finite=True)
    except LinAlgError as err:
        raise NumericalFault("LMMSE system is not positive definite; the input is corrupt.") from err
    counter.add(n_u ** 3 // 6)

    posterior_mean = cho_solve(factor, rhs)
    counter.add(2 * n_u ** 2)

    l_inv = solve_triangular(factor[0], np.eye(n_u), lower=True)
    counter.add(n_u ** 3 // 6 + n_u ** 2)
    posterior_var = noise_var * np.einsum("ij,ij->j", l_inv, l_inv)

    # conditioning cannot increase variance; clip rounding at H = 0
    posterior_var = np.minimum(posterior_var, prior.var)
    if not np.all(np.isfinite(posterior_var)) or np.any(posterior_var <= 0):
        raise NumericalFault("LMMSE posterior variance is not finite and positive.")

    logger.debug("LMMSE on %d x %d channel: %d multiplications.", n_r, n_u, counter.total)

    return LmmseResult(
        posterior_mean=posterior_mean,
        posterior_var=posterior_var,
        mul_count=counter.total,
        prior=prior,
    )


def predict_mmse_mse(cfg):
    """
    Large-system MSE of LMMSE detection for a symmetric prior.

    v = v_prior - sigma_n^2 / (4 N_u) * (sqrt(snr N_r (1 + sqrt(beta))^2 + 1)
    - sqrt(snr N_r (1 - sqrt(beta))^2 + 1))^2, with snr = v_prior / sigma_n^2.

    Parameters
    ----------
    cfg: SystemConfig
        System parameters; the prior must be symmetric.

    Returns
    -------
    float
        Predicted per-user MSE.
    """
    cfg.require_noise()
    prior_var = cfg.prior_var_scalar
    snr_nr = cfg.snr_prior * cfg.n_antennas
    root_beta = np.sqrt(cfg.beta)

    upper = np.sqrt(snr_nr * (1 + root_beta) ** 2 + 1)
    lower = np.sqrt(snr_nr * (1 - root_beta) ** 2 + 1)
    return float(prior_var - cfg.noise_var / (4 * cfg.n_users) * (upper - lower) ** 2)
