import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from mpid.helpers.errors import ConfigError, NonInformativeObservation
from mpid.helpers.rng import derive_trial_seed, make_rng, splitmix64
from mpid.model.messages import GaussianMessage, combine_extrinsic, gaussian_product, mse
from mpid.model.system import ChannelInstance, PriorBelief, SystemConfig, generate_instance

N_USERS = 8
N_ANTENNAS = 4
NOISE_VAR = 0.1


def test_config_broadcasts_scalar_prior():
    cfg = SystemConfig(N_USERS, N_ANTENNAS, NOISE_VAR, prior_var=0.5)
    assert cfg.prior_var.shape == (N_USERS,)
    assert cfg.is_symmetric
    assert cfg.beta == 2.0
    assert cfg.snr_prior == pytest.approx(5.0)
    with pytest.raises(ValueError):
        cfg.prior_var[0] = 1.0


@pytest.mark.parametrize("kwargs", [
    dict(n_users=0, n_antennas=4, noise_var=0.1),
    dict(n_users=4, n_antennas=2.5, noise_var=0.1),
    dict(n_users=4, n_antennas=2, noise_var=-1.0),
    dict(n_users=4, n_antennas=2, noise_var=0.1, prior_var=[1.0, 1.0]),
    dict(n_users=4, n_antennas=2, noise_var=0.1, prior_var=0.0),
    dict(n_users=4, n_antennas=2, noise_var=0.1, seed=-1),
    dict(n_users=4, n_antennas=2, noise_var=0.1, prior_mode="oracle"),
])
def test_config_rejects_invalid(kwargs):
    with pytest.raises(ConfigError):
        SystemConfig(**kwargs)


def test_asymmetric_prior_has_no_scalar():
    cfg = SystemConfig(3, 2, NOISE_VAR, prior_var=[1.0, 2.0, 1.0])
    assert not cfg.is_symmetric
    with pytest.raises(ConfigError):
        cfg.prior_var_scalar


def test_noiseless_instance_is_exact():
    cfg = SystemConfig(N_USERS, N_ANTENNAS, 0.0, prior_mode="uninformative")
    ch, obs, prior = generate_instance(cfg)
    assert_allclose(obs.y, ch.h @ obs.x_true)
    assert np.all(prior.mean == 0)
    with pytest.raises(ConfigError):
        cfg.require_noise()


def test_instance_is_a_function_of_the_seed():
    cfg = SystemConfig(N_USERS, N_ANTENNAS, NOISE_VAR, seed=11, prior_mode="genie")
    first = generate_instance(cfg)
    second = generate_instance(cfg)
    other = generate_instance(cfg.with_seed(12))
    for a, b in zip(first, second):
        for name in vars(a):
            assert np.array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(first[0].h, other[0].h)


def test_genie_prior_is_centred_on_the_truth():
    cfg = SystemConfig(4000, 2, NOISE_VAR, prior_var=0.01, prior_mode="genie", seed=3)
    _, obs, prior = generate_instance(cfg)
    error = prior.mean - obs.x_true
    assert abs(np.mean(error)) < 0.01
    assert np.var(error) == pytest.approx(0.01, rel=0.1)


def test_channel_entries_are_standard_normal():
    h_entries = generate_instance(SystemConfig(400, 100, NOISE_VAR, seed=5))[0].h
    assert h_entries.size == 40000
    assert abs(np.mean(h_entries)) < 0.02
    assert abs(np.var(h_entries) - 1.0) < 0.05


def test_observation_noise_has_the_configured_variance():
    residuals = []
    for seed in range(5):
        cfg = SystemConfig(20, 2000, 0.3, seed=seed)
        ch, obs, _ = generate_instance(cfg)
        residuals.append(obs.y - ch.h @ obs.x_true)
    assert np.var(np.concatenate(residuals)) == pytest.approx(0.3, rel=0.1)


def test_mismatched_uninformative_prior_warns():
    cfg = SystemConfig(N_USERS, N_ANTENNAS, NOISE_VAR, prior_var=0.1, prior_mode="uninformative")
    with pytest.warns(UserWarning):
        generate_instance(cfg)

    matched = SystemConfig(N_USERS, N_ANTENNAS, NOISE_VAR, prior_var=1.0, prior_mode="uninformative")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        generate_instance(matched)


def test_channel_row_energies():
    h = np.array([[1.0, 2.0, 0.0], [0.5, -1.0, 3.0]])
    ch = ChannelInstance.from_matrix(h)
    assert_allclose(ch.gram_diag, np.diag(h @ h.T))
    assert_allclose(ch.column_energy, [1.25, 5.0, 9.0])
    ch.check_matches(3, 2)
    with pytest.raises(ConfigError):
        ch.check_matches(2, 3)


def test_prior_validation():
    with pytest.raises(ConfigError):
        PriorBelief(mean=[0.0, 1.0], var=[1.0, -1.0])
    with pytest.raises(ConfigError):
        PriorBelief(mean=[0.0, 1.0], var=[1.0, 1.0, 1.0])
    assert len(PriorBelief(mean=np.zeros(5), var=2.0)) == 5


def test_extrinsic_then_product_restores_posterior():
    posterior = GaussianMessage.from_moments(np.array([0.3, -1.2]), np.array([0.2, 0.5]))
    prior = GaussianMessage.from_moments(np.array([0.0, -1.0]), np.array([1.0, 0.8]))
    extrinsic = combine_extrinsic(posterior, prior)
    assert_allclose(extrinsic.precision, [4.0, 0.75])
    assert_allclose(extrinsic.mean, [0.375, -1.15 / 0.75])

    restored = gaussian_product(extrinsic, prior)
    assert_allclose(restored.mean, posterior.mean)
    assert_allclose(restored.precision, posterior.precision)


def test_extrinsic_needs_information():
    message = GaussianMessage.from_moments(0.0, 1.0)
    with pytest.raises(NonInformativeObservation):
        combine_extrinsic(message, message)


def test_infinite_variance_message():
    message = GaussianMessage.from_moments(0.0, np.inf)
    assert message.precision == 0.0
    assert message.var == np.inf
    with pytest.raises(ConfigError):
        GaussianMessage.from_moments(0.0, 0.0)


def test_mse_matches_reordered_sum():
    rng = make_rng(5)
    estimate, truth = rng.standard_normal(1000), rng.standard_normal(1000)
    order = rng.permutation(1000)
    reference = sum((estimate[k] - truth[k]) ** 2 for k in order) / 1000
    assert mse(estimate, truth) == pytest.approx(reference, rel=1e-12)
    with pytest.raises(ConfigError):
        mse(estimate, truth[:10])


def test_splitmix64_reference_value():
    assert splitmix64(0) == 0xE220A8397B1DCDAF


def test_trial_seeds_are_distinct():
    seeds = {derive_trial_seed(2024, trial) for trial in range(1000)}
    assert len(seeds) == 1000
    assert derive_trial_seed(2024, 3) == derive_trial_seed(2024, 3)
    with pytest.raises(ValueError):
        derive_trial_seed(2024, -1)
