import logging
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from ..helpers.errors import ConfigError
from ..helpers.rng import make_rng

logger = logging.getLogger(__name__)

PRIOR_MODES = ("uninformative", "genie")

# H is held densely; anything past this is not a desk-scale experiment.
MAX_ENTRIES = 1 << 28


def _frozen(array):
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


def _check_count(name, value):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigError(f"{name} must be an integer, got {value!r}.")
    if value < 1:
        raise ConfigError(f"{name} must be at least 1, got {value}.")


@dataclass(frozen=True, eq=False)
class SystemConfig:
    """
    Ground-truth parameters of the linear system y = Hx + n.

    Parameters
    ----------
    n_users: int
        Number of single-antenna users N_u (columns of H).
    n_antennas: int
        Number of receive antennas N_r (rows of H).
    noise_var: float
        Noise variance sigma_n^2, linear scale. Zero is accepted for noiseless
        instance generation only; detectors require it to be positive.
    prior_var: float or array_like, default=1.0
        Prior variance per user. A scalar is broadcast to all N_u users.
    source_var: float, default=1.0
        Variance sigma_x^2 of the transmitted symbols.
    seed: int, default=0
        64-bit unsigned seed of the instance generator.
    prior_mode: str, default="uninformative"
        "uninformative" gives prior mean 0; "genie" gives prior mean
        x_true + e with e ~ N(0, prior_var).
    """
    n_users: int
    n_antennas: int
    noise_var: float
    prior_var: np.ndarray = 1.0
    source_var: float = 1.0
    seed: int = 0
    prior_mode: str = "uninformative"

    def __post_init__(self):
        _check_count("n_users", self.n_users)
        _check_count("n_antennas", self.n_antennas)
        if self.n_users * self.n_antennas > MAX_ENTRIES:
            raise ConfigError(
                f"{self.n_antennas} x {self.n_users} channel exceeds {MAX_ENTRIES} entries.")

        if not np.isfinite(self.noise_var) or self.noise_var < 0:
            raise ConfigError(f"noise_var must be finite and nonnegative, got {self.noise_var}.")
        if not np.isfinite(self.source_var) or self.source_var <= 0:
            raise ConfigError(f"source_var must be finite and positive, got {self.source_var}.")

        prior_var = np.asarray(self.prior_var, dtype=float)
        if prior_var.ndim == 0:
            prior_var = np.full(self.n_users, float(prior_var))
        if prior_var.shape != (self.n_users,):
            raise ConfigError(
                f"prior_var must be a scalar or have length n_users={self.n_users}, got shape {prior_var.shape}.")
        if not np.all(np.isfinite(prior_var)) or np.any(prior_var <= 0):
            raise ConfigError("prior_var entries must be finite and positive.")
        object.__setattr__(self, "prior_var", _frozen(prior_var))

        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}.")
        if not 0 <= self.seed < (1 << 64):
            raise ConfigError("seed must be a 64-bit unsigned integer.")
        if self.prior_mode not in PRIOR_MODES:
            raise ConfigError(f"prior_mode must be one of {PRIOR_MODES}, got {self.prior_mode!r}.")

    @property
    def beta(self):
        """Load factor N_u / N_r."""
        return self.n_users / self.n_antennas

    @property
    def is_symmetric(self):
        return bool(np.all(self.prior_var == self.prior_var[0]))

    @property
    def prior_var_scalar(self):
        """Common prior variance; only defined for a symmetric prior."""
        if not self.is_symmetric:
            raise ConfigError("closed-form predictors need a symmetric prior (all prior variances equal).")
        return float(self.prior_var[0])

    @property
    def snr_prior(self):
        """snr^l = prior variance / noise variance."""
        self.require_noise()
        return self.prior_var_scalar / self.noise_var

    def require_noise(self):
        if self.noise_var <= 0:
            raise ConfigError("noise_var must be positive for detection and prediction.")

    def with_prior_var(self, prior_var):
        return replace(self, prior_var=prior_var)

    def with_seed(self, seed):
        return replace(self, seed=seed)


@dataclass(frozen=True, eq=False)
class ChannelInstance:
    """
    One realised channel matrix H (N_r x N_u) and its row energies.

    ``gram_diag[m]`` is the m-th diagonal entry of H H^T.
    """
    h: np.ndarray
    gram_diag: np.ndarray = field(repr=False)

    @classmethod
    def from_matrix(cls, h):
        h = np.atleast_2d(np.asarray(h, dtype=float))
        if h.ndim != 2:
            raise ConfigError("channel matrix must be two-dimensional.")
        if not np.all(np.isfinite(h)):
            raise ConfigError("channel matrix must be finite.")
        h = _frozen(h)
        return cls(h=h, gram_diag=_frozen(np.einsum("mk,mk->m", h, h)))

    @property
    def n_antennas(self):
        return self.h.shape[0]

    @property
    def n_users(self):
        return self.h.shape[1]

    @cached_property
    def h_sq(self):
        """Elementwise square of H, shared by every variance recursion."""
        return _frozen(self.h * self.h)

    @cached_property
    def column_energy(self):
        """sum_m h_mk^2 per user."""
        return _frozen(self.h_sq.sum(axis=0))

    def check_matches(self, n_users, n_antennas):
        if self.h.shape != (n_antennas, n_users):
            raise ConfigError(
                f"channel is {self.h.shape}, expected ({n_antennas}, {n_users}).")


@dataclass(frozen=True, eq=False)
class PriorBelief:
    """Per-user Gaussian prior (emulated decoder feedback)."""
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.asarray(self.var, dtype=float)
        if var.ndim == 0:
            var = np.full(mean.shape, float(var))
        if mean.ndim != 1 or var.shape != mean.shape:
            raise ConfigError("prior mean and variance must be vectors of equal length.")
        if not np.all(np.isfinite(mean)):
            raise ConfigError("prior mean must be finite.")
        if not np.all(np.isfinite(var)) or np.any(var <= 0):
            raise ConfigError("prior variances must be finite and positive.")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "var", _frozen(var))

    @property
    def precision(self):
        return 1.0 / self.var

    @property
    def is_symmetric(self):
        return bool(np.all(self.var == self.var[0]))

    def __len__(self):
        return self.mean.shape[0]


@dataclass(frozen=True, eq=False)
class Observation:
    """
    Received vector y and the transmitted x_true.

    Detectors only read ``y``; ``x_true`` is kept for scoring.
    """
    y: np.ndarray
    x_true: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", _frozen(np.atleast_1d(self.y)))
        object.__setattr__(self, "x_true", _frozen(np.atleast_1d(self.x_true)))

    def scaled(self, factor):
        return Observation(y=factor * self.y, x_true=self.x_true)


def check_dimensions(ch, obs, prior):
    """Raise ConfigError unless channel, observation and prior agree."""
    if obs.y.shape != (ch.n_antennas,):
        raise ConfigError(f"y has length {obs.y.shape[0]}, channel has {ch.n_antennas} rows.")
    if len(prior) != ch.n_users:
        raise ConfigError(f"prior has length {len(prior)}, channel has {ch.n_users} columns.")


def generate_instance(cfg, rng=None):
    """
    Draws one channel, observation and prior for a configuration.

    Draw order is fixed (H, x, n, prior perturbation) so that the instance is
    a pure function of the generator state.

    Parameters
    ----------
    cfg: SystemConfig
        System parameters.
    rng: np.random.Generator, optional
        Generator to draw from. If None, one is seeded from ``cfg.seed``.

    Returns
    -------
    ChannelInstance
        H with i.i.d. N(0, 1) entries and no all-zero row.
    Observation
        y = H x_true + n.
    PriorBelief
        Prior according to ``cfg.prior_mode``.
    """
    if rng is None:
        rng = make_rng(cfg.seed)

    h = rng.standard_normal((cfg.n_antennas, cfg.n_users))
    zero_rows = ~np.any(h != 0, axis=1)
    while np.any(zero_rows): # measure zero, but gram_diag must stay positive
        h[zero_rows] = rng.standard_normal((int(zero_rows.sum()), cfg.n_users))
        zero_rows = ~np.any(h != 0, axis=1)

    x_true = np.sqrt(cfg.source_var) * rng.standard_normal(cfg.n_users)
    noise = np.sqrt(cfg.noise_var) * rng.standard_normal(cfg.n_antennas)
    y = h @ x_true + noise

    if cfg.prior_mode == "genie":
        mean = x_true + np.sqrt(cfg.prior_var) * rng.standard_normal(cfg.n_users)
    else:
        if not np.allclose(cfg.prior_var, cfg.source_var):
            warnings.warn(
                "Uninformative prior with prior_var != source_var; the prior is mismatched to the source.")
        mean = np.zeros(cfg.n_users)

    logger.debug("Generated %d x %d instance (seed %d, prior %s).",
                 cfg.n_antennas, cfg.n_users, cfg.seed, cfg.prior_mode)

    return (
        ChannelInstance.from_matrix(h),
        Observation(y=y, x_true=x_true),
        PriorBelief(mean=mean, var=cfg.prior_var),
    )
