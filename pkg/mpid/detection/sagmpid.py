import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np

from ..analysis.spectral import ExactSaOperator, extreme_eigenvalues
from ..helpers.counting import MulCounter
from ..helpers.errors import ConfigError, NonInformativeObservation, RelaxationWindowError
from ..model.system import ChannelInstance, Observation, check_dimensions
from .gmpid import (
    DetectionReport,
    IterationOptions,
    MessageState,
    _check_noise,
    _count,
    _decision,
    _edge_precisions,
    _safe_mse,
    _sum_precisions,
    solve_variances,
)

logger = logging.getLogger(__name__)

RELAXATION_MODES = ("asymptotic", "exact_eigen", "manual")


@dataclass(frozen=True)
class RelaxationChoice:
    """
    Relaxation parameter w of SA-GMPID and how it was obtained.

    ``lambda_min`` / ``lambda_max`` are the extreme eigenvalues of the
    iteration operator and are only filled in the exact_eigen and manual modes.
    """
    w: float
    mode: str
    gamma_tilde: float
    lambda_min: float = None
    lambda_max: float = None

    def __post_init__(self):
        if self.mode not in RELAXATION_MODES:
            raise ConfigError(f"relaxation mode must be one of {RELAXATION_MODES}, got {self.mode!r}.")
        if not np.isfinite(self.w) or self.w <= 0:
            raise RelaxationWindowError(f"w must be finite and positive, got {self.w}.")

    @property
    def rho(self):
        """Spectral radius of I - w A, when the eigenvalues are known."""
        if self.lambda_min is None:
            return None
        return max(abs(1 - self.w * self.lambda_min), abs(1 - self.w * self.lambda_max))


def gamma_tilde(cfg):
    """(N_u + sigma_n^2 / v_prior)^-1 for a symmetric prior."""
    cfg.require_noise()
    return 1.0 / (cfg.n_users + cfg.noise_var / cfg.prior_var_scalar)


def choose_relaxation(ch, cfg, mode="asymptotic", w=None, check_window=True):
    """
    Picks the relaxation parameter of SA-GMPID.

    Parameters
    ----------
    ch: ChannelInstance
        Channel the detector will run on.
    cfg: SystemConfig
        System parameters; the prior must be symmetric and N_u > N_r.
    mode: str, default="asymptotic"
        "asymptotic": w = 1 / (1 + gamma_tilde N_r).
        "exact_eigen": w = 2 / (lambda_min + lambda_max) of the iteration operator.
        "manual": w as given, checked against the window 0 < w < 2 / lambda_max.
    w: float, optional
        Relaxation parameter for manual mode.
    check_window: bool, default=True
        Whether manual mode rejects w outside the convergence window. Turn
        off to study deliberately divergent runs.

    Returns
    -------
    RelaxationChoice
        The chosen w with the quantities it was derived from.
    """
    if mode not in RELAXATION_MODES:
        raise ConfigError(f"relaxation mode must be one of {RELAXATION_MODES}, got {mode!r}.")
    if cfg.beta <= 1:
        raise ConfigError(f"SA-GMPID relaxation needs N_u > N_r, got beta = {cfg.beta:g}.")
    ch.check_matches(cfg.n_users, cfg.n_antennas)
    g_tilde = gamma_tilde(cfg)

    if mode == "asymptotic":
        n_u, n_r = cfg.n_users, cfg.n_antennas
        lambda_min = 1 + g_tilde * (n_r - 2 * np.sqrt(n_u * n_r))
        if lambda_min <= 0:
            raise RelaxationWindowError(
                f"asymptotic spectrum reaches {lambda_min:.3g} <= 0; use exact_eigen mode.")
        return RelaxationChoice(w=1.0 / (1 + g_tilde * n_r), mode=mode, gamma_tilde=g_tilde)

    lambda_min, lambda_max = extreme_eigenvalues(ExactSaOperator(ch.h, cfg.prior_var, cfg.noise_var))

    if mode == "exact_eigen":
        w = 2.0 / (lambda_min + lambda_max)
    elif w is None:
        raise ConfigError("manual relaxation mode needs a value for w.")
    elif check_window and not 0 < w < 2.0 / lambda_max:
        raise RelaxationWindowError(f"w = {w:g} is outside the window (0, {2.0 / lambda_max:g}).")

    logger.debug("Relaxation %s: w = %.6g, spectrum [%.6g, %.6g].", mode, w, lambda_min, lambda_max)
    return RelaxationChoice(
        w=float(w), mode=mode, gamma_tilde=g_tilde, lambda_min=lambda_min, lambda_max=lambda_max)


@dataclass(frozen=True, eq=False)
class ScaledChannel:
    """
    Channel and observation scaled by sqrt(w), with the frozen sum-node
    variances v_s[m] = sum_k h_mk^2 v_prior_k + sigma_n^2.

    Built once per (instance, w). ``base`` keeps the unscaled channel for
    every variance path.
    """
    base: ChannelInstance
    h: np.ndarray
    obs: Observation
    v_bar_s: np.ndarray
    w: float

    @classmethod
    def build(cls, ch, obs, prior, noise_var, w, counter=None):
        _check_noise(noise_var)
        root_w = np.sqrt(w)
        v_bar_s = ch.h_sq @ prior.var + noise_var
        _count(counter, 2 * ch.h.size + 2 * ch.n_antennas)
        h = root_w * ch.h
        h.setflags(write=False)
        return cls(base=ch, h=h, obs=obs.scaled(root_w), v_bar_s=v_bar_s, w=float(w))

    @property
    def n_users(self):
        return self.base.n_users

    @property
    def n_antennas(self):
        return self.base.n_antennas


def _sa_totals(x_s, h_scaled, precomputed_vs, counter=None):
    """sum_m h'_mk x_s[m] / v_s[m] per user, with the per-antenna weights."""
    weighted = x_s / precomputed_vs
    total = h_scaled.T @ weighted
    _count(counter, weighted.size + h_scaled.size)
    return weighted, total


def _sa_edge_means(total, weighted, h_scaled, prior, counter=None):
    x_v = prior.var[:, None] * (total[:, None] - h_scaled.T * weighted[None, :]) + prior.mean[:, None]
    _count(counter, 2 * h_scaled.size)
    return x_v


def sa_sum_node_update(state, ch_scaled, obs_scaled, noise_var, w, update_variance=True, counter=None):
    """
    Scaled-and-added sum-node update.

    x_s[m](t) = y'_m - sum_i h'_mi x_v[i, m](t-1) - (w - 1) x_s[m](t-1). The
    variance update is the GMPID one on the unscaled channel.

    Parameters
    ----------
    state: MessageState
        Messages of the previous iteration; its ``x_s`` is the added memory term.
    ch_scaled: ScaledChannel
        sqrt(w) H and the unscaled channel.
    obs_scaled: Observation
        sqrt(w) y.
    noise_var: float
        Noise variance.
    w: float
        Relaxation parameter.
    update_variance: bool, default=True
        If False the sum-node precisions of ``state`` are kept.
    counter: MulCounter, optional
        Multiplication tally.

    Returns
    -------
    MessageState
        State with new sum-node messages.
    """
    _check_noise(noise_var)
    state.check_matches(ch_scaled.base)
    x_s = obs_scaled.y - np.einsum("mi,im->m", ch_scaled.h, state.x_v) - (w - 1) * state.x_s
    _count(counter, ch_scaled.h.size + ch_scaled.n_antennas)
    prec_s = _sum_precisions(state.prec_v, ch_scaled.base, noise_var, counter) if update_variance else state.prec_s
    return replace(state, x_s=x_s, prec_s=prec_s, iteration=state.iteration + 1)


def sa_variable_node_update(state, ch_scaled, prior, precomputed_vs, update_variance=True, counter=None):
    """
    Scaled variable-node update with frozen weights.

    x_v[k, m] = v_prior_k (sum_{i != m} h'_ik x_s[i] / v_s[i] + x_prior_k / v_prior_k),
    where v_s are the precomputed sum-node variances. Edge variances follow
    the GMPID recursion.

    Parameters
    ----------
    state: MessageState
        Messages after a sum-node update.
    ch_scaled: ScaledChannel
        Scaled channel.
    prior: PriorBelief
        Prior means and variances.
    precomputed_vs: np.ndarray
        Frozen sum-node variances, length N_r.
    update_variance: bool, default=True
        If False the edge precisions of ``state`` are kept.
    counter: MulCounter, optional
        Multiplication tally.

    Returns
    -------
    MessageState
        State with new variable-node messages.
    """
    state.check_matches(ch_scaled.base)
    if update_variance:
        prec_v, _ = _edge_precisions(state.prec_s, ch_scaled.base, prior, counter)
    else:
        prec_v = state.prec_v
    weighted, total = _sa_totals(state.x_s, ch_scaled.h, np.asarray(precomputed_vs), counter)
    x_v = _sa_edge_means(total, weighted, ch_scaled.h, prior, counter)
    return replace(state, x_v=x_v, prec_v=prec_v)


def sa_decide(state, ch_scaled, prior, precomputed_vs):
    """
    SA-GMPID decision.

    The variance uses the GMPID sum-node variances of ``state``; the mean
    uses the frozen weights.
    """
    state.check_matches(ch_scaled.base)
    decision_prec = ch_scaled.base.h_sq.T @ state.prec_s + prior.precision
    _, total = _sa_totals(state.x_s, ch_scaled.h, np.asarray(precomputed_vs))
    _, posterior_var = _decision(total, decision_prec)
    return prior.var * total + prior.mean, posterior_var


def sa_extrinsic(state, ch_scaled, prior, precomputed_vs):
    """
    SA-GMPID extrinsic output.

    v_e = (sum_m h_mk^2 / v_s[m])^-1 and x_e = (v_prior + v_e) u + x_prior,
    with u the frozen-weight sum of the decision. Equals
    v_e (x_hat / v_hat - x_prior / v_prior).
    """
    state.check_matches(ch_scaled.base)
    prec_e = ch_scaled.base.h_sq.T @ state.prec_s
    if np.any(prec_e <= 0):
        users = np.flatnonzero(prec_e <= 0)
        raise NonInformativeObservation(f"users {users.tolist()} receive no information from the observation.")
    var_e = 1.0 / prec_e
    _, total = _sa_totals(state.x_s, ch_scaled.h, np.asarray(precomputed_vs))
    return (prior.var + var_e) * total + prior.mean, var_e


def sa_gmpid_run(ch, obs, prior, noise_var, relax, opts=None, variances=None, oracle=None):
    """
    Scaled-and-added GMPID.

    Runs the scaled updates from x_v = 0, x_s = 0 with the mean weights frozen
    at the prior and sum-node variances. A converged run reproduces the LMMSE
    estimate.

    Parameters
    ----------
    ch: ChannelInstance
        Channel.
    obs: Observation
        Received vector; ``x_true`` is only used for the MSE trace.
    prior: PriorBelief
        Prior means and variances.
    noise_var: float
        Noise variance, must be positive.
    relax: RelaxationChoice
        Relaxation parameter.
    opts: IterationOptions, optional
        Stopping rules and variance schedule.
    variances: VarianceSchedule, optional
        Precomputed variance schedule (presolved schedule only).
    oracle: LmmseResult, optional
        If given, a converged run is compared against it and the relative
        gap is stored in the report.

    Returns
    -------
    DetectionReport
        Decision, extrinsic output, traces and verdict.
    """
    opts = opts or IterationOptions()
    check_dimensions(ch, obs, prior)
    _check_noise(noise_var)

    counter = MulCounter()
    joint = opts.schedule == "joint"
    scaled = ScaledChannel.build(ch, obs, prior, noise_var, relax.w, counter)

    if joint:
        schedule = None
        state = MessageState.initial(ch.n_users, ch.n_antennas)
    else:
        schedule = variances if variances is not None else solve_variances(
            ch, prior, noise_var, tol=opts.variance_tol, max_iters=opts.variance_max_iters)
        if schedule.prec_v.shape != (ch.n_users, ch.n_antennas):
            raise ConfigError("variance schedule does not match the channel dimensions.")
        counter.add(schedule.mul_count)
        state = MessageState(
            x_v=np.zeros((ch.n_users, ch.n_antennas)),
            prec_v=schedule.prec_v,
            x_s=np.zeros(ch.n_antennas),
            prec_s=schedule.prec_s,
        )
    setup = counter.total

    mse_trace, mul_trace, history = [], [], []
    verdict = "max_iterations"
    previous = None

    for _ in range(opts.max_iters):
        state = sa_sum_node_update(
            state, scaled, scaled.obs, noise_var, relax.w, update_variance=joint, counter=counter)
        if joint:
            prec_v, decision_prec = _edge_precisions(state.prec_s, ch, prior, counter)
        else:
            prec_v, decision_prec = state.prec_v, schedule.decision_prec

        weighted, total = _sa_totals(state.x_s, scaled.h, scaled.v_bar_s, counter)
        posterior_mean = prior.var * total + prior.mean
        _, posterior_var = _decision(total, decision_prec, counter)
        state = replace(state, x_v=_sa_edge_means(total, weighted, scaled.h, prior, counter), prec_v=prec_v)

        mse_trace.append(_safe_mse(posterior_mean, obs.x_true))
        mul_trace.append(counter.total)
        if opts.keep_history:
            history.append(posterior_mean.copy())

        magnitude = state.max_magnitude()
        if not np.isfinite(magnitude) or magnitude > opts.divergence_threshold:
            verdict = "diverged"
            break
        if previous is not None and \
                np.linalg.norm(posterior_mean - previous) <= opts.tol * np.linalg.norm(posterior_mean):
            verdict = "converged"
            break
        previous = posterior_mean

    oracle_gap = None
    if oracle is not None and verdict == "converged":
        reference = oracle.posterior_mean
        oracle_gap = float(np.linalg.norm(posterior_mean - reference) / max(np.linalg.norm(reference), 1e-300))
        if oracle_gap > opts.oracle_tol:
            warnings.warn(f"SA-GMPID converged {oracle_gap:.3g} away from the LMMSE estimate (tol {opts.oracle_tol:g}).")

    try:
        extrinsic_mean, extrinsic_var = sa_extrinsic(state, scaled, prior, scaled.v_bar_s)
    except NonInformativeObservation as err:
        warnings.warn(f"Extrinsic output undefined after {state.iteration} iteration(s): {err}")
        extrinsic_mean, extrinsic_var = np.zeros(ch.n_users), np.full(ch.n_users, np.inf)

    logger.debug("SA-GMPID (w = %.6g) %s after %d iterations (MSE %.6g).",
                 relax.w, verdict, state.iteration, mse_trace[-1])

    return DetectionReport(
        detector="sa_gmpid",
        posterior_mean=posterior_mean,
        posterior_var=posterior_var,
        extrinsic_mean=extrinsic_mean,
        extrinsic_var=extrinsic_var,
        mse_trace=tuple(mse_trace),
        mul_trace=tuple(mul_trace),
        verdict=verdict,
        mul_count=counter.total,
        iterations=state.iteration,
        setup_mul_count=setup,
        variances=schedule,
        mean_history=tuple(history) if opts.keep_history else None,
        oracle_gap=oracle_gap,
    )
