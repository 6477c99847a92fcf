import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from ..detection.gmpid import DetectionReport, IterationOptions, _safe_mse, solve_variances
from ..helpers.counting import MulCounter
from ..helpers.errors import ConfigError
from ..model.messages import GaussianMessage, combine_extrinsic
from ..model.system import check_dimensions
from .spectral import SymmetricOperator, extreme_eigenvalues

logger = logging.getLogger(__name__)

CLASSICAL_KINDS = ("jacobi", "richardson")
STEP_MODES = ("exact_eigen", "asymptotic")


@dataclass(frozen=True, eq=False)
class ClassicalResult:
    """
    Outcome of a stationary iteration x(t) = B x(t-1) + c.

    ``trace`` holds ||B x + c - x|| for every iterate examined.
    """
    solution: np.ndarray
    trace: tuple
    verdict: str
    iterations: int


def classical_iterate(b_operator, c, opts, x0=None, callback=None):
    """
    Runs x(t) = B x(t-1) + c until the residual of (I - B) x = c drops below
    ``opts.tol``.

    Parameters
    ----------
    b_operator: np.ndarray or LinearOperator
        Iteration matrix B.
    c: np.ndarray
        Constant term.
    opts: IterationOptions
        ``max_iters``, ``tol`` and ``divergence_threshold`` are used.
    x0: np.ndarray, optional
        Start vector, zero if None.
    callback: callable, optional
        Called as ``callback(iteration, x)`` after every update.

    Returns
    -------
    ClassicalResult
        Final iterate, residual trace, verdict and number of updates applied.
    """
    operator = aslinearoperator(b_operator)
    c = np.asarray(c, dtype=float)
    if operator.shape != (c.size, c.size):
        raise ConfigError(f"iteration matrix is {operator.shape}, constant term has length {c.size}.")
    x = np.zeros(c.size) if x0 is None else np.array(x0, dtype=float)
    if x.shape != c.shape:
        raise ConfigError("start vector and constant term differ in length.")

    trace = []
    for iteration in range(opts.max_iters):
        x_next = operator.matvec(x) + c
        residual = float(np.linalg.norm(x_next - x))
        trace.append(residual)

        if not np.all(np.isfinite(x_next)) or np.max(np.abs(x_next), initial=0.0) > opts.divergence_threshold:
            return ClassicalResult(x_next, tuple(trace), "diverged", iteration + 1)
        if residual < opts.tol:
            return ClassicalResult(x, tuple(trace), "converged", iteration)

        x = x_next
        if callback is not None:
            callback(iteration + 1, x)

    return ClassicalResult(x, tuple(trace), "max_iterations", opts.max_iters)


class _DualGramOperator(SymmetricOperator):
    """W = H V H^T + sigma_n^2 I on the N_r-dimensional dual space."""
    def __init__(self, h, prior_var, noise_var):
        super().__init__(h.shape[0])
        self.h = h
        self.prior_var = prior_var
        self.noise_var = noise_var

    def _matvec(self, z):
        z = np.ravel(z)
        return self.h @ (self.prior_var * (self.h.T @ z)) + self.noise_var * z

    def to_dense(self):
        dual = (self.h * self.prior_var) @ self.h.T
        dual[np.diag_indices_from(dual)] += self.noise_var
        return dual


class _StationaryOperator(LinearOperator):
    """B z = z - P W z, P a diagonal preconditioner (Jacobi) or a step (Richardson)."""
    def __init__(self, dual, preconditioner):
        super().__init__(dtype=np.float64, shape=dual.shape)
        self.dual = dual
        self.preconditioner = preconditioner

    def _matvec(self, z):
        z = np.ravel(z)
        return z - self.preconditioner * self.dual.matvec(z)


@dataclass(frozen=True, eq=False)
class ClassicalSystem:
    """
    Stationary iteration on the dual LMMSE system W z = y - H x_prior.

    ``recover`` maps a dual iterate z to the estimate x_prior + V H^T z.
    """
    kind: str
    b_operator: LinearOperator
    c: np.ndarray
    recover: Callable
    step: float
    per_iteration_mul_count: int
    setup_mul_count: int


def _dual_parts(ch, obs, prior, noise_var):
    check_dimensions(ch, obs, prior)
    if not noise_var > 0:
        raise ConfigError(f"noise_var must be positive, got {noise_var}.")
    h = ch.h
    dual = _DualGramOperator(h, prior.var, noise_var)
    residual = obs.y - h @ prior.mean

    def recover(z):
        return prior.mean + prior.var * (h.T @ z)

    return dual, residual, recover


def jacobi_preset(ch, obs, prior, noise_var):
    """
    Jacobi iteration on the dual LMMSE system.

    B = -S^-1 (H V H^T - D), c = S^-1 (y - H x_prior), S the diagonal of
    H V H^T + sigma_n^2 I and D that of H V H^T.
    """
    dual, residual, recover = _dual_parts(ch, obs, prior, noise_var)
    inv_diag = 1.0 / (ch.h_sq @ prior.var + noise_var)
    n_u, n_r = ch.n_users, ch.n_antennas
    return ClassicalSystem(
        kind="jacobi",
        b_operator=_StationaryOperator(dual, inv_diag),
        c=inv_diag * residual,
        recover=recover,
        step=float("nan"),
        per_iteration_mul_count=2 * n_u * n_r + n_u + 2 * n_r,
        setup_mul_count=2 * n_u * n_r + 2 * n_r + n_u * n_r + n_u,
    )


def richardson_preset(ch, obs, prior, noise_var, mode="exact_eigen"):
    """
    Richardson iteration on the dual LMMSE system.

    B = I - omega W, c = omega (y - H x_prior). In exact_eigen mode
    omega = 2 / (lambda_min + lambda_max) of W; in asymptotic mode
    omega = 1 / (v_prior (N_u + N_r) + sigma_n^2), symmetric prior only.
    """
    if mode not in STEP_MODES:
        raise ConfigError(f"step mode must be one of {STEP_MODES}, got {mode!r}.")
    dual, residual, recover = _dual_parts(ch, obs, prior, noise_var)
    n_u, n_r = ch.n_users, ch.n_antennas

    if mode == "exact_eigen":
        lambda_min, lambda_max = extreme_eigenvalues(dual)
        omega = 2.0 / (lambda_min + lambda_max)
    else:
        if not prior.is_symmetric:
            raise ConfigError("asymptotic Richardson step needs a symmetric prior.")
        omega = 1.0 / (prior.var[0] * (n_u + n_r) + noise_var)

    logger.debug("Richardson step %.6g (%s).", omega, mode)
    return ClassicalSystem(
        kind="richardson",
        b_operator=_StationaryOperator(dual, omega),
        c=omega * residual,
        recover=recover,
        step=float(omega),
        per_iteration_mul_count=2 * n_u * n_r + n_u + 2 * n_r,
        setup_mul_count=n_u * n_r + n_r + n_u * n_r + n_u,
    )


def run_classical_detector(kind, ch, obs, prior, noise_var, opts=None, mode="exact_eigen", variances=None):
    """
    Runs a Jacobi or Richardson preset and reports it like the message
    passing detectors.

    The iterations produce means only; posterior variances are the decision
    variances of the GMPID variance schedule.

    Parameters
    ----------
    kind: str
        "jacobi" or "richardson".
    ch, obs, prior, noise_var:
        The instance, as for every detector.
    opts: IterationOptions, optional
        Stopping rules.
    mode: str, default="exact_eigen"
        Richardson step mode.
    variances: VarianceSchedule, optional
        Precomputed variance schedule for this channel.

    Returns
    -------
    DetectionReport
        Report with detector name ``kind``.
    """
    opts = opts or IterationOptions()
    if kind == "jacobi":
        system = jacobi_preset(ch, obs, prior, noise_var)
    elif kind == "richardson":
        system = richardson_preset(ch, obs, prior, noise_var, mode=mode)
    else:
        raise ConfigError(f"classical detector must be one of {CLASSICAL_KINDS}, got {kind!r}.")

    schedule = variances if variances is not None else solve_variances(
        ch, prior, noise_var, tol=opts.variance_tol, max_iters=opts.variance_max_iters)

    counter = MulCounter()
    counter.add(system.setup_mul_count)
    setup = counter.total
    mse_trace, mul_trace, history = [], [], []

    def record(iteration, z):
        counter.add(system.per_iteration_mul_count)
        estimate = system.recover(z)
        mse_trace.append(_safe_mse(estimate, obs.x_true))
        mul_trace.append(counter.total)
        if opts.keep_history:
            history.append(estimate)

    result = classical_iterate(system.b_operator, system.c, opts, callback=record)
    if result.verdict == "diverged":
        record(result.iterations, result.solution)

    posterior_mean = system.recover(result.solution)
    posterior_var = schedule.posterior_var
    if not mse_trace: # the start vector already solved the system
        mse_trace.append(_safe_mse(posterior_mean, obs.x_true))
        mul_trace.append(counter.total)

    if np.all(np.isfinite(posterior_mean)):
        message = combine_extrinsic(
            GaussianMessage.from_moments(posterior_mean, posterior_var),
            GaussianMessage.from_moments(prior.mean, prior.var),
        )
        extrinsic_mean, extrinsic_var = np.atleast_1d(message.mean), np.atleast_1d(message.var)
    else:
        extrinsic_mean, extrinsic_var = np.full(ch.n_users, np.nan), 1.0 / schedule.decision_prec

    logger.debug("%s %s after %d iterations.", kind, result.verdict, result.iterations)

    return DetectionReport(
        detector=kind,
        posterior_mean=posterior_mean,
        posterior_var=posterior_var,
        extrinsic_mean=extrinsic_mean,
        extrinsic_var=extrinsic_var,
        mse_trace=tuple(mse_trace),
        mul_trace=tuple(mul_trace),
        verdict=result.verdict,
        mul_count=counter.total,
        iterations=len(mse_trace),
        setup_mul_count=setup,
        variances=schedule,
        mean_history=tuple(history) if opts.keep_history else None,
    )
