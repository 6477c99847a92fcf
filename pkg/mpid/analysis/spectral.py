import logging
import warnings

import numpy as np
from scipy.linalg import eigvalsh
from scipy.sparse.linalg import LinearOperator

from ..helpers.errors import ConfigError, SpectralConvergenceError
from ..helpers.rng import make_rng

logger = logging.getLogger(__name__)

DENSE_FALLBACK_MAX = 2000


class SymmetricOperator(LinearOperator):
    """
    Real symmetric matrix applied through its factors.

    Subclasses implement ``_matvec`` and ``to_dense``; the dense form is only
    built for the eigensolver fallback and for tests.
    """
    def __init__(self, n):
        super().__init__(dtype=np.float64, shape=(n, n))

    def _adjoint(self):
        return self

    def to_dense(self):
        return np.column_stack([self.matvec(column) for column in np.eye(self.shape[0])])


class DenseOperator(SymmetricOperator):
    """Explicit symmetric matrix."""
    def __init__(self, matrix):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ConfigError("operator matrix must be square.")
        if not np.allclose(matrix, matrix.T, rtol=1e-12, atol=1e-12 * np.max(np.abs(matrix), initial=1.0)):
            raise ConfigError("operator matrix must be symmetric.")
        super().__init__(matrix.shape[0])
        self.matrix = matrix

    def _matvec(self, x):
        return self.matrix @ np.ravel(x)

    def to_dense(self):
        return self.matrix.copy()


class OffDiagonalGramOperator(SymmetricOperator):
    """
    scale * (H H^T - D), D the exact diagonal of H H^T.

    The GMPID mean recursion at converged variances, gamma (H H^T - D).
    """
    def __init__(self, h, scale=1.0, gram_diag=None):
        h = np.asarray(h, dtype=float)
        super().__init__(h.shape[0])
        self.h = h
        self.scale = float(scale)
        self.gram_diag = np.einsum("mk,mk->m", h, h) if gram_diag is None else np.asarray(gram_diag)

    def _matvec(self, x):
        x = np.ravel(x)
        return self.scale * (self.h @ (self.h.T @ x) - self.gram_diag * x)

    def to_dense(self):
        gram = self.h @ self.h.T
        gram[np.diag_indices_from(gram)] = 0.0
        return self.scale * gram


class ExactSaOperator(SymmetricOperator):
    """
    S^-1/2 (H V H^T + sigma_n^2 I) S^-1/2 with S = diag(H V H^T) + sigma_n^2 I.

    Similar to the SA-GMPID iteration operator (H V H^T + sigma_n^2 I) S^-1,
    so both share their eigenvalues.
    """
    def __init__(self, h, prior_var, noise_var):
        h = np.asarray(h, dtype=float)
        super().__init__(h.shape[0])
        self.h = h
        self.prior_var = np.broadcast_to(np.asarray(prior_var, dtype=float), (h.shape[1],))
        self.noise_var = float(noise_var)
        self.v_bar_s = (h * h) @ self.prior_var + self.noise_var
        self._inv_sqrt = 1.0 / np.sqrt(self.v_bar_s)

    def _matvec(self, x):
        u = self._inv_sqrt * np.ravel(x)
        return self._inv_sqrt * (self.h @ (self.prior_var * (self.h.T @ u)) + self.noise_var * u)

    def to_dense(self):
        gram = (self.h * self.prior_var) @ self.h.T
        gram[np.diag_indices_from(gram)] += self.noise_var
        return self._inv_sqrt[:, None] * gram * self._inv_sqrt[None, :]


class AffineOperator(SymmetricOperator):
    """
    shift * I + scale * base.

    Its extreme eigenvalues are mapped from those of ``base``, so e.g.
    I - w A never needs its own power iteration.
    """
    def __init__(self, base, shift=0.0, scale=1.0):
        super().__init__(base.shape[0])
        self.base = base
        self.shift = float(shift)
        self.scale = float(scale)

    def _matvec(self, x):
        x = np.ravel(x)
        return self.shift * x + self.scale * self.base.matvec(x)

    def to_dense(self):
        dense = self.scale * self.base.to_dense()
        dense[np.diag_indices_from(dense)] += self.shift
        return dense


def power_iteration(operator, tol=1e-8, max_iters=10000, shift=0.0, seed=0):
    """
    Dominant eigenvalue of ``operator - shift * I`` by power iteration.

    Stops when the eigen-residual ||B x - lambda x|| falls below
    tol * |lambda|, lambda being the Rayleigh quotient.

    Parameters
    ----------
    operator: LinearOperator
        Symmetric operator.
    tol: float, default=1e-8
        Relative residual tolerance.
    max_iters: int, default=10000
        Iteration cap.
    shift: float, default=0.0
        Spectral shift subtracted from the operator.
    seed: int, default=0
        Seed of the start vector.

    Returns
    -------
    float
        Rayleigh quotient of the final iterate (eigenvalue of the shifted operator).
    bool
        Whether the residual test was met.
    int
        Iterations used.
    """
    n = operator.shape[0]
    x = make_rng(seed).standard_normal(n)
    x /= np.linalg.norm(x)
    value = 0.0

    for iteration in range(1, max_iters + 1):
        y = operator.matvec(x) - shift * x
        value = float(x @ y)
        y_norm = np.linalg.norm(y)
        if y_norm == 0: # x lies in the null space
            return 0.0, True, iteration
        if np.linalg.norm(y - value * x) <= tol * abs(value):
            return value, True, iteration
        x = y / y_norm

    return value, False, max_iters


def extreme_eigenvalues(operator, tol=1e-8, max_iters=10000, dense_fallback=DENSE_FALLBACK_MAX, seed=0):
    """
    Smallest and largest eigenvalue of a symmetric operator.

    A power pass finds the eigenvalue of largest magnitude; a second pass on
    the operator shifted by it finds the opposite end of the spectrum.

    Parameters
    ----------
    operator: SymmetricOperator or array_like
        Symmetric operator or matrix.
    tol: float, default=1e-8
        Relative residual tolerance of each power pass.
    max_iters: int, default=10000
        Iteration cap of each power pass.
    dense_fallback: int, default=2000
        Largest dimension for which a failed power pass falls back to a dense
        eigensolver. Set to 0 to disable the fallback.
    seed: int, default=0
        Seed of the start vectors.

    Returns
    -------
    float
        Smallest eigenvalue.
    float
        Largest eigenvalue.
    """
    if not isinstance(operator, LinearOperator):
        operator = DenseOperator(operator)

    if isinstance(operator, AffineOperator):
        low, high = extreme_eigenvalues(operator.base, tol, max_iters, dense_fallback, seed)
        ends = sorted((operator.shift + operator.scale * low, operator.shift + operator.scale * high))
        return ends[0], ends[1]

    n = operator.shape[0]
    if n == 1:
        value = float(operator.matvec(np.ones(1))[0])
        return value, value

    dominant, ok_dominant, used_dominant = power_iteration(operator, tol, max_iters, seed=seed)
    other, ok_other, used_other = power_iteration(operator, tol, max_iters, shift=dominant, seed=seed + 1)
    logger.debug("Power iteration: %d + %d passes on dimension %d.", used_dominant, used_other, n)

    if not (ok_dominant and ok_other):
        if n > dense_fallback:
            raise SpectralConvergenceError(
                f"power iteration did not converge within {max_iters} iterations on dimension {n}.")
        warnings.warn(f"Power iteration did not converge on dimension {n}; using a dense eigensolver.")
        spectrum = eigvalsh(operator.to_dense())
        return float(spectrum[0]), float(spectrum[-1])

    ends = sorted((dominant, other + dominant))
    return ends[0], ends[1]


def spectral_radius(operator, tol=1e-8, max_iters=10000, dense_fallback=DENSE_FALLBACK_MAX, seed=0):
    """Largest absolute eigenvalue of a symmetric operator or matrix."""
    low, high = extreme_eigenvalues(operator, tol, max_iters, dense_fallback, seed)
    return max(abs(low), abs(high))
