import pytest

from mpid.model.system import SystemConfig, generate_instance


@pytest.fixture
def make_instance():
    """Factory for (cfg, channel, observation, prior) with a genie prior by default."""
    def _make(n_users, n_antennas, noise_var, prior_var=1.0, seed=0, prior_mode="genie", source_var=1.0):
        cfg = SystemConfig(
            n_users=n_users,
            n_antennas=n_antennas,
            noise_var=noise_var,
            prior_var=prior_var,
            source_var=source_var,
            seed=seed,
            prior_mode=prior_mode,
        )
        ch, obs, prior = generate_instance(cfg)
        return cfg, ch, obs, prior
    return _make
