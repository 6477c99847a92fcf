import numpy as np
import pytest
from numpy.testing import assert_allclose

from mpid.analysis.classical import classical_iterate, jacobi_preset, richardson_preset, run_classical_detector
from mpid.detection.gmpid import IterationOptions, gmpid_run, solve_variances
from mpid.detection.lmmse import lmmse_detect
from mpid.helpers.errors import ConfigError
from mpid.model.system import ChannelInstance, Observation, PriorBelief

OPTS = IterationOptions(max_iters=2000, tol=1e-12)
PRIOR_VAR = 0.01
NOISE_VAR = 1.0


def test_zero_iteration_matrix_converges_at_once():
    c = np.array([1.0, -2.0, 0.5])
    result = classical_iterate(np.zeros((3, 3)), c, OPTS)
    assert result.verdict == "converged"
    assert result.iterations == 1
    assert_allclose(result.solution, c)


def test_diagonal_system():
    b = np.diag([0.5, 0.25])
    result = classical_iterate(b, np.ones(2), OPTS)
    assert result.verdict == "converged"
    assert_allclose(result.solution, [2.0, 4.0 / 3.0], rtol=1e-10)
    assert result.trace[-1] < OPTS.tol


def test_expanding_iteration_diverges():
    result = classical_iterate(2.0 * np.eye(2), np.ones(2), OPTS)
    assert result.verdict == "diverged"
    assert result.iterations < OPTS.max_iters


def test_iteration_cap():
    result = classical_iterate(0.999 * np.eye(2), np.ones(2), IterationOptions(max_iters=10))
    assert result.verdict == "max_iterations"
    assert len(result.trace) == 10


def test_shape_mismatch():
    with pytest.raises(ConfigError):
        classical_iterate(np.eye(3), np.ones(2), OPTS)
    with pytest.raises(ConfigError):
        classical_iterate(np.eye(2), np.ones(2), OPTS, x0=np.ones(3))


@pytest.mark.parametrize("mode", ["exact_eigen", "asymptotic"])
def test_richardson_reaches_the_lmmse_estimate(make_instance, mode):
    _, ch, obs, prior = make_instance(200, 100, NOISE_VAR, prior_var=PRIOR_VAR, seed=1)
    oracle = lmmse_detect(ch, obs, prior, NOISE_VAR)
    report = run_classical_detector("richardson", ch, obs, prior, NOISE_VAR, OPTS, mode=mode)
    assert report.detector == "richardson"
    assert report.verdict == "converged"
    assert_allclose(report.posterior_mean, oracle.posterior_mean, rtol=1e-6,
                    atol=1e-6 * np.abs(oracle.posterior_mean).max())


def test_jacobi_follows_gmpid_into_divergence(make_instance):
    _, ch, obs, prior = make_instance(500, 350, NOISE_VAR, prior_var=PRIOR_VAR, seed=2)
    schedule = solve_variances(ch, prior, NOISE_VAR)
    opts = IterationOptions(max_iters=1000)
    assert run_classical_detector("jacobi", ch, obs, prior, NOISE_VAR, opts, variances=schedule).verdict == "diverged"
    assert gmpid_run(ch, obs, prior, NOISE_VAR, opts, variances=schedule).verdict == "diverged"


def test_jacobi_converges_at_high_load(make_instance):
    _, ch, obs, prior = make_instance(400, 50, 0.1, seed=3)
    oracle = lmmse_detect(ch, obs, prior, 0.1)
    report = run_classical_detector("jacobi", ch, obs, prior, 0.1, OPTS)
    assert report.verdict == "converged"
    assert_allclose(report.posterior_mean, oracle.posterior_mean, rtol=1e-6,
                    atol=1e-6 * np.abs(oracle.posterior_mean).max())


def test_report_borrows_the_variance_schedule(make_instance):
    _, ch, obs, prior = make_instance(200, 100, NOISE_VAR, prior_var=PRIOR_VAR, seed=4)
    schedule = solve_variances(ch, prior, NOISE_VAR)
    report = run_classical_detector("richardson", ch, obs, prior, NOISE_VAR, OPTS, variances=schedule)
    assert report.variances is schedule
    assert_allclose(report.posterior_var, schedule.posterior_var)
    assert len(report.mse_trace) == len(report.mul_trace) == report.iterations
    assert report.per_iteration_mul_count == 2 * 200 * 100 + 200 + 2 * 100


def test_presets():
    h = np.array([[1.0, 0.5, -0.2], [0.3, -1.0, 0.8]])
    ch = ChannelInstance.from_matrix(h)
    obs = Observation(y=[0.4, -0.1], x_true=np.zeros(3))
    prior = PriorBelief(mean=[0.1, 0.0, -0.2], var=[1.0, 0.5, 2.0])

    dual = (h * prior.var) @ h.T + 0.3 * np.eye(2)
    jacobi = jacobi_preset(ch, obs, prior, 0.3)
    assert_allclose(jacobi.b_operator.matmat(np.eye(2)), np.eye(2) - dual / np.diag(dual)[:, None], atol=1e-12)
    assert_allclose(jacobi.c, (obs.y - h @ prior.mean) / np.diag(dual))

    richardson = richardson_preset(ch, obs, prior, 0.3)
    spectrum = np.linalg.eigvalsh(dual)
    assert richardson.step == pytest.approx(2.0 / spectrum.sum(), rel=1e-6)
    with pytest.raises(ConfigError):
        richardson_preset(ch, obs, prior, 0.3, mode="asymptotic")
    with pytest.raises(ConfigError):
        run_classical_detector("gauss_seidel", ch, obs, prior, 0.3)
