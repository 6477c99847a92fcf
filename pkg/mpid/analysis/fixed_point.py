import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve

from ..helpers.errors import ConfigError, NumericalFault
from ..model.system import check_dimensions
from .spectral import AffineOperator, ExactSaOperator, OffDiagonalGramOperator, extreme_eigenvalues, spectral_radius

logger = logging.getLogger(__name__)

BETA_THRESHOLD = 3 + 2 * np.sqrt(2) # (sqrt(2) - 1)^-2
LIMIT_AGREEMENT = 1e-10


def solve_variance_fixed_point(cfg):
    """
    Converged GMPID variance for a symmetric prior.

    v is the positive root of N_u / v_prior v^2 + (sigma_n^2 / v_prior + N_r - N_u) v - sigma_n^2 = 0,
    computed without cancellation.

    Parameters
    ----------
    cfg: SystemConfig
        System parameters; the prior must be symmetric.

    Returns
    -------
    float
        v_hat, the converged posterior variance.
    float
        v_s = N_u v_hat + sigma_n^2, the converged sum-node variance.
    float
        gamma = v_hat / v_s.
    """
    cfg.require_noise()
    prior_var = cfg.prior_var_scalar
    a = cfg.n_users / prior_var
    b = cfg.noise_var / prior_var + cfg.n_antennas - cfg.n_users
    c = -cfg.noise_var

    # c < 0, so the roots have opposite signs and the discriminant exceeds b^2
    q = -0.5 * (b + np.copysign(np.sqrt(b * b - 4 * a * c), b))
    v_hat = c / q if q < 0 else q / a

    v_s = cfg.n_users * v_hat + cfg.noise_var
    return float(v_hat), float(v_s), float(v_hat / v_s)


def quadratic_residual(cfg, v_hat):
    """Left-hand side of the variance quadratic at ``v_hat``."""
    prior_var = cfg.prior_var_scalar
    return (cfg.n_users / prior_var * v_hat ** 2
            + (cfg.noise_var / prior_var + cfg.n_antennas - cfg.n_users) * v_hat
            - cfg.noise_var)


@dataclass(frozen=True)
class ConvergencePrediction:
    """
    Convergence quantities of GMPID and SA-GMPID for one configuration.

    The empirical fields are None when no channel was sampled.
    """
    v_hat: float
    v_s: float
    gamma: float
    gamma_tilde: float
    rho_gmpid_asymptotic: float
    rho_sa_asymptotic: float
    w_star_asymptotic: float
    beta_threshold_met: bool
    sufficient_condition_met: bool
    rho_gmpid_empirical: float = None
    rho_sa: float = None
    diag_dominant: bool = None


def predict_convergence(cfg):
    """
    Channel-free convergence prediction from the large-system formulas.

    Parameters
    ----------
    cfg: SystemConfig
        System parameters; the prior must be symmetric.

    Returns
    -------
    ConvergencePrediction
        Asymptotic fields only.
    """
    v_hat, v_s, gamma = solve_variance_fixed_point(cfg)
    n_u, n_r = cfg.n_users, cfg.n_antennas
    inv_beta = 1.0 / cfg.beta
    gamma_tilde = 1.0 / (n_u + cfg.noise_var / cfg.prior_var_scalar)

    return ConvergencePrediction(
        v_hat=v_hat,
        v_s=v_s,
        gamma=gamma,
        gamma_tilde=gamma_tilde,
        rho_gmpid_asymptotic=float(gamma * n_u * (inv_beta + 2 * np.sqrt(inv_beta))),
        rho_sa_asymptotic=float(2 * gamma_tilde * np.sqrt(n_u * n_r) / (1 + gamma_tilde * n_r)),
        w_star_asymptotic=float(1.0 / (1 + gamma_tilde * n_r)),
        beta_threshold_met=bool(cfg.beta > BETA_THRESHOLD),
        sufficient_condition_met=bool(gamma * (n_r + 2 * np.sqrt(n_u * n_r)) < 1),
    )


def check_mean_convergence(ch, cfg):
    """
    Checks the GMPID mean-convergence conditions on a sampled channel.

    Strict row diagonal dominance of I + gamma (H H^T - D) and the spectral
    radius of gamma (H H^T - D) are evaluated on the exact diagonal D. The
    SA-GMPID radius is that of I - w A on the exact iteration operator with
    w = 2 / (lambda_min + lambda_max).

    Parameters
    ----------
    ch: ChannelInstance
        Sampled channel.
    cfg: SystemConfig
        System parameters; the prior must be symmetric.

    Returns
    -------
    ConvergencePrediction
        Asymptotic and empirical fields.
    """
    ch.check_matches(cfg.n_users, cfg.n_antennas)
    prediction = predict_convergence(cfg)
    gamma = prediction.gamma

    gram = ch.h @ ch.h.T
    off_diagonal = np.sum(np.abs(gram), axis=1) - np.abs(np.diag(gram))
    diag_dominant = bool(np.all(1.0 > gamma * off_diagonal))

    rho_gmpid = spectral_radius(OffDiagonalGramOperator(ch.h, gamma, ch.gram_diag))

    sa_operator = ExactSaOperator(ch.h, cfg.prior_var, cfg.noise_var)
    lambda_min, lambda_max = extreme_eigenvalues(sa_operator)
    w = 2.0 / (lambda_min + lambda_max)
    rho_sa = spectral_radius(AffineOperator(sa_operator, shift=1.0, scale=-w))

    logger.debug("Radii on %d x %d channel: GMPID %.6g, SA-GMPID %.6g.",
                 ch.n_antennas, ch.n_users, rho_gmpid, rho_sa)

    return ConvergencePrediction(
        v_hat=prediction.v_hat,
        v_s=prediction.v_s,
        gamma=gamma,
        gamma_tilde=prediction.gamma_tilde,
        rho_gmpid_asymptotic=prediction.rho_gmpid_asymptotic,
        rho_sa_asymptotic=prediction.rho_sa_asymptotic,
        w_star_asymptotic=prediction.w_star_asymptotic,
        beta_threshold_met=prediction.beta_threshold_met,
        sufficient_condition_met=prediction.sufficient_condition_met,
        rho_gmpid_empirical=rho_gmpid,
        rho_sa=rho_sa,
        diag_dominant=diag_dominant,
    )


@dataclass(frozen=True, eq=False)
class LimitFormula:
    """
    GMPID mean fixed point.

    ``x_star`` is the sum-node form and ``gap`` the relative distance between
    the two evaluations; both are None for the exact finite-size form.
    """
    x_hat: np.ndarray
    x_star: np.ndarray = None
    gap: float = None


def _exact_limit(ch, obs, prior, noise_var, variances):
    """
    Fixed point of the mean recursion at frozen edge variances.

    With a = 1 / prec_v (N_u x N_r), s = 1 / prec_s and z = x_s / s, the
    recursion is stationary when (diag(s - c) + (H o a^T) H^T) z =
    y - (H o a^T) x_prior / v_prior, c_m = sum_i h_mi^2 a_im.
    """
    h = ch.h
    edge_var = 1.0 / variances.prec_v
    weighted_h = h * edge_var.T
    s = 1.0 / variances.prec_s
    c = np.einsum("mi,mi->m", h, weighted_h)

    system = weighted_h @ h.T
    system[np.diag_indices_from(system)] += s - c
    rhs = obs.y - weighted_h @ (prior.mean * prior.precision)
    z = solve(system, rhs)
    return (h.T @ z + prior.mean * prior.precision) / variances.decision_prec


def gmpid_limit_formula(ch, obs, prior, cfg, v_hat=None, variances=None, return_intermediate=False):
    """
    Mean that a convergent GMPID run settles on.

    Without ``variances`` the large-system form is evaluated,
    x = (theta H^T H + I)^-1 (theta H^T y + alpha x_prior) with
    theta = v_hat / sigma_n^2 and alpha = v_hat / v_prior, and cross-checked
    against x* = ((1 - gamma N_u) I + gamma H H^T)^-1 (y - alpha H x_prior),
    x = gamma H^T x* + alpha x_prior. With a converged ``variances`` schedule
    the exact finite-size fixed point of the implemented recursion is
    returned instead.

    Parameters
    ----------
    ch: ChannelInstance
        Channel.
    obs: Observation
        Received vector.
    prior: PriorBelief
        Prior means (and variances for the exact form).
    cfg: SystemConfig
        System parameters; the large-system form needs a symmetric prior.
    v_hat: float, optional
        Converged variance; defaults to the root of the variance quadratic.
    variances: VarianceSchedule, optional
        Converged variance schedule for the exact form.
    return_intermediate: bool, default=False
        Whether to return a LimitFormula with x* and the agreement gap.

    Returns
    -------
    np.ndarray or LimitFormula
        Fixed-point mean.
    """
    check_dimensions(ch, obs, prior)
    cfg.require_noise()

    if variances is not None:
        x_hat = _exact_limit(ch, obs, prior, cfg.noise_var, variances)
        return LimitFormula(x_hat=x_hat) if return_intermediate else x_hat

    if v_hat is None:
        v_hat = solve_variance_fixed_point(cfg)[0]
    if not v_hat > 0:
        raise ConfigError(f"v_hat must be positive, got {v_hat}.")

    h = ch.h
    n_u = ch.n_users
    theta = v_hat / cfg.noise_var
    alpha = v_hat / cfg.prior_var_scalar
    gamma = v_hat / (n_u * v_hat + cfg.noise_var)

    system = theta * (h.T @ h)
    system[np.diag_indices(n_u)] += 1.0
    x_hat = cho_solve(cho_factor(system), theta * (h.T @ obs.y) + alpha * prior.mean)

    dual = gamma * (h @ h.T)
    dual[np.diag_indices_from(dual)] += 1 - gamma * n_u
    x_star = cho_solve(cho_factor(dual), obs.y - alpha * (h @ prior.mean))
    x_dual = gamma * (h.T @ x_star) + alpha * prior.mean

    gap = float(np.linalg.norm(x_hat - x_dual) / max(np.linalg.norm(x_hat), 1e-300))
    if not np.isfinite(gap):
        raise NumericalFault("fixed-point evaluation produced non-finite values.")
    if gap > LIMIT_AGREEMENT:
        warnings.warn(f"Fixed-point forms disagree by {gap:.3g} (relative).")

    if return_intermediate:
        return LimitFormula(x_hat=x_hat, x_star=x_star, gap=gap)
    return x_hat
