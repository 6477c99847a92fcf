import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np

from ..helpers.counting import MulCounter
from ..helpers.errors import ConfigError, NonInformativeObservation, NumericalFault
from ..model.messages import mse
from ..model.system import check_dimensions

logger = logging.getLogger(__name__)

SCHEDULES = ("presolved", "joint")
VERDICTS = ("converged", "max_iterations", "diverged")


@dataclass(frozen=True)
class IterationOptions:
    """
    Stopping rules shared by every iterative detector.

    Parameters
    ----------
    max_iters: int, default=200
        Maximum number of mean iterations.
    tol: float, default=1e-8
        Relative Euclidean change of the decision mean that counts as converged.
    divergence_threshold: float, default=1e12
        Message magnitude above which a run is declared diverged.
    oracle_tol: float, default=1e-6
        Relative distance to the LMMSE estimate tolerated by SA-GMPID.
    schedule: str, default="presolved"
        "presolved" iterates the variances to their fixed point first;
        "joint" updates variances and means together.
    variance_tol: float, default=1e-10
        Relative change that stops the variance recursion.
    variance_max_iters: int, default=500
        Cap on the variance recursion.
    keep_history: bool, default=False
        Whether to keep the decision mean of every iteration.
    """
    max_iters: int = 200
    tol: float = 1e-8
    divergence_threshold: float = 1e12
    oracle_tol: float = 1e-6
    schedule: str = "presolved"
    variance_tol: float = 1e-10
    variance_max_iters: int = 500
    keep_history: bool = False

    def __post_init__(self):
        if isinstance(self.max_iters, bool) or not isinstance(self.max_iters, (int, np.integer)) or self.max_iters < 1:
            raise ConfigError(f"max_iters must be a positive integer, got {self.max_iters!r}.")
        if isinstance(self.variance_max_iters, bool) or not isinstance(self.variance_max_iters, (int, np.integer)) \
                or self.variance_max_iters < 1:
            raise ConfigError(f"variance_max_iters must be a positive integer, got {self.variance_max_iters!r}.")
        for name in ("tol", "divergence_threshold", "oracle_tol", "variance_tol"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ConfigError(f"{name} must be finite and positive, got {value}.")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}.")


@dataclass(frozen=True, eq=False)
class MessageState:
    """
    Edge messages of the fully connected graph.

    Variable-to-sum messages are N_u x N_r arrays. Sum-to-variable messages
    do not depend on the receiving user, so one value per sum node is kept
    (length N_r); the full N_r x N_u array is its column broadcast.
    Precision 0 stands for infinite variance.
    """
    x_v: np.ndarray
    prec_v: np.ndarray
    x_s: np.ndarray
    prec_s: np.ndarray
    iteration: int = 0

    @classmethod
    def initial(cls, n_users, n_antennas):
        """x_v = 0 with infinite variance on every edge."""
        return cls(
            x_v=np.zeros((n_users, n_antennas)),
            prec_v=np.zeros((n_users, n_antennas)),
            x_s=np.zeros(n_antennas),
            prec_s=np.zeros(n_antennas),
        )

    @property
    def var_s(self):
        with np.errstate(divide="ignore"):
            return np.where(self.prec_s > 0, 1.0 / self.prec_s, np.inf)

    @property
    def var_v(self):
        with np.errstate(divide="ignore"):
            return np.where(self.prec_v > 0, 1.0 / self.prec_v, np.inf)

    def check_matches(self, ch):
        if self.x_v.shape != (ch.n_users, ch.n_antennas) or self.x_s.shape != (ch.n_antennas,):
            raise ConfigError("message state does not match the channel dimensions.")

    def max_magnitude(self):
        return max(float(np.max(np.abs(self.x_v), initial=0.0)), float(np.max(np.abs(self.x_s), initial=0.0)))


@dataclass(frozen=True, eq=False)
class VarianceSchedule:
    """
    Converged edge precisions of the y-independent variance recursion.

    Reusable across every observation that shares the channel.
    """
    prec_s: np.ndarray
    prec_v: np.ndarray
    decision_prec: np.ndarray
    mean_var_trace: tuple
    iterations: int
    converged: bool
    monotone: bool
    mul_count: int

    @property
    def var_s(self):
        return 1.0 / self.prec_s

    @property
    def posterior_var(self):
        return 1.0 / self.decision_prec

    @property
    def mean_posterior_var(self):
        return float(np.mean(self.posterior_var))


@dataclass(frozen=True, eq=False)
class DetectionReport:
    """
    Result of one iterative detector run.

    ``mse_trace`` and ``mul_trace`` hold one entry per executed iteration;
    ``mul_trace`` is cumulative and includes ``setup_mul_count``.
    """
    detector: str
    posterior_mean: np.ndarray
    posterior_var: np.ndarray
    extrinsic_mean: np.ndarray
    extrinsic_var: np.ndarray
    mse_trace: tuple
    mul_trace: tuple
    verdict: str
    mul_count: int
    iterations: int
    setup_mul_count: int
    variances: VarianceSchedule = None
    mean_history: tuple = None
    oracle_gap: float = None

    @property
    def per_iteration_mul_count(self):
        if self.iterations == 0:
            return 0
        return (self.mul_count - self.setup_mul_count) // self.iterations

    @property
    def final_mse(self):
        return self.mse_trace[-1] if self.mse_trace else None


def _count(counter, n):
    if counter is not None:
        counter.add(n)


def _check_noise(noise_var):
    if not noise_var > 0:
        raise ConfigError(f"noise_var must be positive, got {noise_var}.")


def _sum_precisions(prec_v, ch, noise_var, counter=None):
    """
    Sum-node variance sum_i h_mi^2 v_v[i, m] + sigma_n^2, as a precision.

    A row that still receives an infinite-variance edge with h_mi != 0 has
    infinite variance itself, i.e. precision 0.
    """
    h_sq_t = ch.h_sq.T
    unknown = np.any((prec_v == 0) & (h_sq_t != 0), axis=0)
    with np.errstate(divide="ignore"):
        var_v = np.where(prec_v > 0, 1.0 / prec_v, 0.0)
    var_s = np.einsum("im,im->m", h_sq_t, var_v) + noise_var
    _count(counter, 2 * prec_v.size + var_s.size)
    return np.where(unknown, 0.0, 1.0 / var_s)


def _edge_precisions(prec_s, ch, prior, counter=None):
    """
    Variable-node precisions by subtract-one-term.

    Returns the N_u x N_r edge precisions and the full per-user precision
    (the decision precision).
    """
    h_sq_t = ch.h_sq.T
    decision_prec = h_sq_t @ prec_s + prior.precision
    prec_v = decision_prec[:, None] - h_sq_t * prec_s[None, :]
    _count(counter, 2 * h_sq_t.size)
    if not np.all(np.isfinite(prec_v)) or np.any(prec_v <= 0):
        raise NumericalFault("variable-node variance is not finite and positive.")
    return prec_v, decision_prec


def _weighted_totals(x_s, prec_s, ch, prior, counter=None):
    """sum_m h_mk x_s[m] / v_s[m] + x_prior_k / v_prior_k per user."""
    weighted = x_s * prec_s
    total = ch.h.T @ weighted + prior.mean * prior.precision
    _count(counter, weighted.size + ch.h.size + total.size)
    return weighted, total


def _edge_means(total, weighted, h, prec_v, counter=None):
    """Variable-node means with the m-th term removed from each total."""
    x_v = (total[:, None] - h.T * weighted[None, :]) / prec_v
    _count(counter, 2 * h.size)
    return x_v


def _decision(total, decision_prec, counter=None):
    if not np.all(np.isfinite(decision_prec)) or np.any(decision_prec <= 0):
        raise NumericalFault("decision variance is not finite and positive.")
    posterior_var = 1.0 / decision_prec
    _count(counter, total.size)
    return posterior_var * total, posterior_var


def sum_node_update(state, ch, obs, noise_var, update_variance=True, counter=None):
    """
    Sum-node update.

    x_s[m] = y_m - sum_i h_mi x_v[i, m] and v_s[m] = sum_i h_mi^2 v_v[i, m] + sigma_n^2,
    both summed over every user i and sent identically to every user.

    Parameters
    ----------
    state: MessageState
        Messages after the previous variable-node update.
    ch: ChannelInstance
        Channel.
    obs: Observation
        Received vector.
    noise_var: float
        Noise variance, must be positive.
    update_variance: bool, default=True
        If False the sum-node precisions of ``state`` are kept.
    counter: MulCounter, optional
        Multiplication tally.

    Returns
    -------
    MessageState
        State with new sum-node messages and the iteration counter advanced.
    """
    _check_noise(noise_var)
    state.check_matches(ch)
    x_s = obs.y - np.einsum("mi,im->m", ch.h, state.x_v)
    _count(counter, ch.h.size)
    prec_s = _sum_precisions(state.prec_v, ch, noise_var, counter) if update_variance else state.prec_s
    return replace(state, x_s=x_s, prec_s=prec_s, iteration=state.iteration + 1)


def variable_node_update(state, ch, prior, update_variance=True, counter=None):
    """
    Variable-node update.

    v_v[k, m] = (sum_{i != m} h_ik^2 / v_s[i] + 1 / v_prior_k)^-1 and
    x_v[k, m] = v_v[k, m] (sum_{i != m} h_ik x_s[i] / v_s[i] + x_prior_k / v_prior_k).
    The excluded term is subtracted from the full sum per user.

    Parameters
    ----------
    state: MessageState
        Messages after a sum-node update.
    ch: ChannelInstance
        Channel.
    prior: PriorBelief
        Prior means and variances.
    update_variance: bool, default=True
        If False the edge precisions of ``state`` are kept.
    counter: MulCounter, optional
        Multiplication tally.

    Returns
    -------
    MessageState
        State with new variable-node messages.
    """
    state.check_matches(ch)
    if update_variance:
        prec_v, _ = _edge_precisions(state.prec_s, ch, prior, counter)
    else:
        prec_v = state.prec_v
    weighted, total = _weighted_totals(state.x_s, state.prec_s, ch, prior, counter)
    x_v = _edge_means(total, weighted, ch.h, prec_v, counter)
    return replace(state, x_v=x_v, prec_v=prec_v)


def decide(state, ch, prior, noise_var):
    """
    Decision on all incoming messages.

    Returns
    -------
    np.ndarray
        Posterior means.
    np.ndarray
        Posterior variances.
    """
    _check_noise(noise_var)
    state.check_matches(ch)
    decision_prec = ch.h_sq.T @ state.prec_s + prior.precision
    _, total = _weighted_totals(state.x_s, state.prec_s, ch, prior)
    return _decision(total, decision_prec)


def extrinsic(state, ch):
    """
    Extrinsic output: the decision with the prior removed.

    Returns
    -------
    np.ndarray
        Extrinsic means.
    np.ndarray
        Extrinsic variances.

    Raises
    ------
    NonInformativeObservation
        If some user receives no precision from the sum nodes, e.g. an
        all-zero column of H.
    """
    state.check_matches(ch)
    prec_e = ch.h_sq.T @ state.prec_s
    if np.any(prec_e <= 0):
        users = np.flatnonzero(prec_e <= 0)
        raise NonInformativeObservation(f"users {users.tolist()} receive no information from the observation.")
    var_e = 1.0 / prec_e
    return var_e * (ch.h.T @ (state.x_s * state.prec_s)), var_e


def solve_variances(ch, prior, noise_var, tol=1e-10, max_iters=500):
    """
    Runs the variance recursion alone, starting from infinite variances.

    The recursion does not depend on y, so the result can be shared by every
    observation on the same channel.

    Parameters
    ----------
    ch: ChannelInstance
        Channel.
    prior: PriorBelief
        Prior variances (means are ignored).
    noise_var: float
        Noise variance, must be positive.
    tol: float, default=1e-10
        Maximum relative change of the sum-node precisions at convergence.
    max_iters: int, default=500
        Iteration cap.

    Returns
    -------
    VarianceSchedule
        Converged precisions and the per-iteration mean decision variance.
    """
    _check_noise(noise_var)
    if len(prior) != ch.n_users:
        raise ConfigError(f"prior has length {len(prior)}, channel has {ch.n_users} columns.")

    counter = MulCounter()
    prec_v = np.zeros((ch.n_users, ch.n_antennas))
    prec_s = np.zeros(ch.n_antennas)
    trace = []
    monotone = True
    converged = False

    for iteration in range(1, max_iters + 1):
        new_prec_s = _sum_precisions(prec_v, ch, noise_var, counter)
        prec_v, decision_prec = _edge_precisions(new_prec_s, ch, prior, counter)
        trace.append(float(np.mean(1.0 / decision_prec)))

        # variances never grow, i.e. precisions never shrink
        if np.any(new_prec_s < prec_s * (1 - 1e-12)):
            monotone = False

        change = np.max(np.abs(new_prec_s - prec_s) / np.where(new_prec_s > 0, new_prec_s, np.inf), initial=0.0)
        prec_s = new_prec_s
        if iteration > 1 and np.all(prec_s > 0) and change < tol:
            converged = True
            break

    if not converged:
        warnings.warn(f"Variance recursion did not reach tol={tol} within {max_iters} iterations.")
    if np.any(prec_s <= 0):
        raise NumericalFault("sum-node variances are still infinite after the variance recursion.")

    logger.debug("Variance recursion: %d iterations, mean decision variance %.6g.", iteration, trace[-1])

    return VarianceSchedule(
        prec_s=prec_s,
        prec_v=prec_v,
        decision_prec=decision_prec,
        mean_var_trace=tuple(trace),
        iterations=iteration,
        converged=converged,
        monotone=monotone,
        mul_count=counter.total,
    )


def _safe_mse(estimate, x_true):
    if not np.all(np.isfinite(estimate)):
        return float("inf")
    return mse(estimate, x_true)


def _safe_extrinsic(state, ch):
    try:
        return extrinsic(state, ch)
    except NonInformativeObservation as err:
        warnings.warn(f"Extrinsic output undefined after {state.iteration} iteration(s): {err}")
        return np.zeros(ch.n_users), np.full(ch.n_users, np.inf)


def gmpid_run(ch, obs, prior, noise_var, opts=None, variances=None):
    """
    Gaussian message passing iterative detection.

    Alternates sum-node and variable-node updates, records the MSE of the
    decision after every iteration and stops on convergence, on the
    iteration cap, or on divergence.

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
    opts: IterationOptions, optional
        Stopping rules and variance schedule.
    variances: VarianceSchedule, optional
        Precomputed variance schedule for this channel and prior (presolved
        schedule only). Computed here if None.

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
        state = sum_node_update(state, ch, obs, noise_var, update_variance=joint, counter=counter)
        if joint:
            prec_v, decision_prec = _edge_precisions(state.prec_s, ch, prior, counter)
        else:
            prec_v, decision_prec = state.prec_v, schedule.decision_prec

        weighted, total = _weighted_totals(state.x_s, state.prec_s, ch, prior, counter)
        posterior_mean, posterior_var = _decision(total, decision_prec, counter)
        state = replace(state, x_v=_edge_means(total, weighted, ch.h, prec_v, counter), prec_v=prec_v)

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

    extrinsic_mean, extrinsic_var = _safe_extrinsic(state, ch)
    logger.debug("GMPID %s after %d iterations (MSE %.6g).", verdict, state.iteration, mse_trace[-1])

    return DetectionReport(
        detector="gmpid",
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
    )
