import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.linalg import eigvalsh
from scipy.optimize import bisect

from mpid.analysis.fixed_point import (
    BETA_THRESHOLD,
    LimitFormula,
    check_mean_convergence,
    gmpid_limit_formula,
    predict_convergence,
    quadratic_residual,
    solve_variance_fixed_point,
)
from mpid.analysis.spectral import (
    AffineOperator,
    DenseOperator,
    ExactSaOperator,
    OffDiagonalGramOperator,
    extreme_eigenvalues,
    spectral_radius,
)
from mpid.detection.gmpid import IterationOptions, gmpid_run, solve_variances
from mpid.detection.lmmse import lmmse_detect, predict_mmse_mse
from mpid.helpers.errors import ConfigError, SpectralConvergenceError
from mpid.helpers.rng import make_rng
from mpid.model.messages import mse
from mpid.model.system import ChannelInstance, Observation, SystemConfig

BETAS = np.linspace(1.1, 16, 10)
SNRS = np.logspace(-2, 2, 10)
N_CHANNELS = 20


def random_symmetric(n, low, high, seed=0):
    q, _ = np.linalg.qr(make_rng(seed).standard_normal((n, n)))
    return (q * np.linspace(low, high, n)) @ q.T


@pytest.mark.parametrize("beta", BETAS)
def test_variance_root_equals_predicted_mmse(beta):
    for snr in SNRS:
        cfg = SystemConfig(int(round(100 * beta)), 100, 1.0 / snr, prior_var=1.0)
        v_hat, v_s, gamma = solve_variance_fixed_point(cfg)
        assert v_hat == pytest.approx(predict_mmse_mse(cfg), rel=1e-9)
        assert v_s == pytest.approx(cfg.n_users * v_hat + cfg.noise_var)
        assert gamma == pytest.approx(v_hat / v_s)


@pytest.mark.parametrize("noise_var, prior_var", [(0.1, 1.0), (1e-6, 1.0), (100.0, 0.01)])
def test_variance_root_matches_bisection(noise_var, prior_var):
    cfg = SystemConfig(400, 100, noise_var, prior_var=prior_var)
    v_hat = solve_variance_fixed_point(cfg)[0]
    reference = bisect(lambda v: quadratic_residual(cfg, v), 0.0, prior_var, xtol=1e-16, rtol=1e-14)
    assert v_hat == pytest.approx(reference, rel=1e-10)
    assert 0 < v_hat < prior_var


def test_reference_prediction():
    prediction = predict_convergence(SystemConfig(400, 100, 0.1, prior_var=1.0))
    assert prediction.v_hat == pytest.approx(0.7500833, rel=1e-6)
    assert not prediction.beta_threshold_met
    assert prediction.rho_gmpid_asymptotic > 1
    assert prediction.rho_sa_asymptotic < 1
    assert prediction.rho_gmpid_empirical is None


@pytest.mark.parametrize("noise_var", [1e-3, 0.1, 10.0])
def test_beta_threshold(noise_var):
    assert BETA_THRESHOLD == pytest.approx(5.828427, rel=1e-6)
    assert predict_convergence(SystemConfig(800, 100, noise_var)).beta_threshold_met
    assert predict_convergence(SystemConfig(800, 100, noise_var)).sufficient_condition_met


def test_prediction_needs_a_symmetric_prior():
    with pytest.raises(ConfigError):
        predict_convergence(SystemConfig(4, 2, 0.1, prior_var=[1.0, 1.0, 2.0, 1.0]))


def test_power_iteration_matches_dense_solver():
    matrix = random_symmetric(30, -2.0, 7.0, seed=1)
    low, high = extreme_eigenvalues(matrix)
    assert low == pytest.approx(-2.0, rel=1e-6)
    assert high == pytest.approx(7.0, rel=1e-6)
    assert spectral_radius(DenseOperator(-matrix)) == pytest.approx(7.0, rel=1e-6)


def test_scalar_operator():
    assert extreme_eigenvalues([[3.5]]) == (3.5, 3.5)


def test_affine_operator_maps_the_ends():
    base = DenseOperator(random_symmetric(20, 0.5, 3.0, seed=2))
    affine = AffineOperator(base, shift=1.0, scale=-0.4)
    low, high = extreme_eigenvalues(affine)
    assert low == pytest.approx(1 - 0.4 * 3.0, rel=1e-6)
    assert high == pytest.approx(1 - 0.4 * 0.5, rel=1e-6)
    assert_allclose(affine.to_dense(), np.eye(20) - 0.4 * base.to_dense())


def test_failed_power_iteration():
    matrix = np.diag([1.0, 2.0, 3.0])
    with pytest.raises(SpectralConvergenceError):
        extreme_eigenvalues(matrix, max_iters=1, dense_fallback=0)
    with pytest.warns(UserWarning):
        low, high = extreme_eigenvalues(matrix, max_iters=1)
    assert (low, high) == pytest.approx((1.0, 3.0))


def test_dense_operator_rejects_asymmetric():
    with pytest.raises(ConfigError):
        DenseOperator([[1.0, 2.0], [0.0, 1.0]])


def test_operators_match_their_dense_forms(make_instance):
    cfg, ch, _, _ = make_instance(60, 20, 0.5, prior_var=0.3)
    x = make_rng(3).standard_normal(20)

    gram = OffDiagonalGramOperator(ch.h, scale=0.1, gram_diag=ch.gram_diag)
    dense = 0.1 * (ch.h @ ch.h.T - np.diag(ch.gram_diag))
    assert_allclose(gram.to_dense(), dense, atol=1e-12)
    assert_allclose(gram.matvec(x), dense @ x, atol=1e-12)

    sa = ExactSaOperator(ch.h, cfg.prior_var, cfg.noise_var)
    unsymmetric = (0.3 * ch.h @ ch.h.T + 0.5 * np.eye(20)) / sa.v_bar_s[None, :]
    assert_allclose(np.sort(eigvalsh(sa.to_dense())), np.sort(np.linalg.eigvals(unsymmetric).real), rtol=1e-9)
    assert_allclose(sa.matvec(x), sa.to_dense() @ x, rtol=1e-10)


@pytest.mark.parametrize("beta", [2, 4, 8])
def test_sa_radius_is_below_gmpid_radius(make_instance, beta):
    for trial in range(N_CHANNELS):
        cfg, ch, _, _ = make_instance(400, 400 // beta, 0.1, seed=trial, prior_mode="uninformative")
        prediction = check_mean_convergence(ch, cfg)
        assert prediction.rho_sa < prediction.rho_gmpid_empirical


def test_asymptotic_gmpid_radius(make_instance):
    for trial in range(N_CHANNELS):
        cfg, ch, _, _ = make_instance(400, 100, 0.1, seed=trial, prior_mode="uninformative")
        prediction = check_mean_convergence(ch, cfg)
        assert prediction.rho_gmpid_empirical == pytest.approx(prediction.rho_gmpid_asymptotic, rel=0.1)
        assert not prediction.diag_dominant


def test_asymptotic_sa_radius(make_instance):
    for trial in range(N_CHANNELS):
        cfg, ch, _, _ = make_instance(400, 100, 1.0, prior_var=0.01, seed=trial)
        prediction = check_mean_convergence(ch, cfg)
        assert prediction.rho_sa == pytest.approx(prediction.rho_sa_asymptotic, rel=0.1)


def test_diagonal_dominance_at_low_load():
    h = np.array([[1.0, 0.0, 0.1], [0.0, 1.0, -0.1]])
    cfg = SystemConfig(3, 2, 0.5)
    # two antennas: the off-diagonal spectrum is symmetric, so the dense solver takes over
    with pytest.warns(UserWarning):
        prediction = check_mean_convergence(ChannelInstance.from_matrix(h), cfg)
    assert prediction.diag_dominant
    assert prediction.rho_gmpid_empirical < 1


def test_large_system_limit_forms_agree(make_instance):
    cfg, ch, obs, prior = make_instance(400, 100, 0.1, seed=4)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        limit = gmpid_limit_formula(ch, obs, prior, cfg, return_intermediate=True)
    assert isinstance(limit, LimitFormula)
    assert limit.gap <= 1e-10
    assert limit.x_star.shape == (100,)
    assert_allclose(gmpid_limit_formula(ch, obs, prior, cfg), limit.x_hat)
    with pytest.raises(ConfigError):
        gmpid_limit_formula(ch, obs, prior, cfg, v_hat=-1.0)


def test_converged_run_reaches_the_limit(make_instance):
    opts = IterationOptions(max_iters=1000, tol=1e-13)
    for trial in range(5):
        cfg, ch, obs, prior = make_instance(400, 50, 0.1, seed=20 + trial)
        schedule = solve_variances(ch, prior, 0.1)
        report = gmpid_run(ch, obs, prior, 0.1, opts, variances=schedule)
        assert report.verdict == "converged"
        limit = gmpid_limit_formula(ch, obs, prior, cfg, variances=schedule)
        assert_allclose(report.posterior_mean, limit, rtol=1e-6, atol=1e-6 * np.abs(limit).max())


def linear_estimator(estimate, n_antennas):
    """Columns are the estimates for y = e_1, ..., e_Nr (zero prior mean)."""
    return np.column_stack([estimate(column) for column in np.eye(n_antennas)])


def expected_mse(g, h, noise_var):
    """E ||G y - x||^2 / N_u for x ~ N(0, I), y = H x + n."""
    n_users = h.shape[1]
    return (np.sum((g @ h - np.eye(n_users)) ** 2) + noise_var * np.sum(g ** 2)) / n_users


def test_gmpid_limit_has_a_higher_expected_mse_than_lmmse(make_instance):
    for trial in range(5):
        cfg, ch, obs, prior = make_instance(400, 50, 0.1, seed=40 + trial, prior_mode="uninformative")
        schedule = solve_variances(ch, prior, 0.1)

        def gmpid_estimate(y):
            return gmpid_limit_formula(ch, Observation(y=y, x_true=obs.x_true), prior, cfg, variances=schedule)

        def lmmse_estimate(y):
            return lmmse_detect(ch, Observation(y=y, x_true=obs.x_true), prior, 0.1).posterior_mean

        gmpid_risk = expected_mse(linear_estimator(gmpid_estimate, 50), ch.h, 0.1)
        lmmse_risk = expected_mse(linear_estimator(lmmse_estimate, 50), ch.h, 0.1)
        assert lmmse_risk == pytest.approx(np.mean(lmmse_detect(ch, obs, prior, 0.1).posterior_var), rel=1e-9)
        assert gmpid_risk > lmmse_risk


def test_gmpid_mse_over_convergent_trials(make_instance):
    # Single trials are dominated by the draw of x_true, so only closeness is asserted per trial.
    opts = IterationOptions(max_iters=1000, tol=1e-13)
    gmpid_mse, lmmse_mse = [], []
    for trial in range(50):
        _, ch, obs, prior = make_instance(400, 50, 0.1, seed=100 + trial, prior_mode="uninformative")
        report = gmpid_run(ch, obs, prior, 0.1, opts)
        if report.verdict != "converged":
            continue
        gmpid_mse.append(mse(report.posterior_mean, obs.x_true))
        lmmse_mse.append(mse(lmmse_detect(ch, obs, prior, 0.1).posterior_mean, obs.x_true))

    assert len(gmpid_mse) >= 40
    gmpid_mse, lmmse_mse = np.array(gmpid_mse), np.array(lmmse_mse)
    assert_allclose(gmpid_mse, lmmse_mse, rtol=1e-4)
    print(f"GMPID worse than LMMSE on {int(np.sum(gmpid_mse > lmmse_mse))} of {len(gmpid_mse)} convergent trials, "
          f"mean difference {np.mean(gmpid_mse - lmmse_mse):.3g}.")
