"""Model types and the collapsed marginal likelihood.

The regression is ``y ~ N(b0 1 + X beta, 1/nu I)`` with
``beta ~ N(0, Gamma / (nu lam))``, ``b0 ~ N(0, 1 / (nu lam))`` and
``Gamma = diag(gamma > gamma0)``.  Integrating out ``beta`` and ``b0``
leaves

    y | mask, lam, nu  ~  N(0, (1/nu) * M),   M = I + (1 1' + X_S X_S') / lam

Everything here works with the pair ``(log det M, y' M^{-1} y)``; the
Gaussian log density and the conjugate update for ``nu`` are both simple
functions of that pair.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import lgamma

import numpy as np
from scipy import linalg, special, stats

from .errors import InvalidArgumentError, NumericalError

LOG_2PI = float(np.log(2.0 * np.pi))

# Relative diagonal jitter tried, in order, when a factorization fails.
FACTOR_JITTERS = (0.0, 1e-12, 1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class Dataset:
    """A regression instance: ``n`` samples of response ``y`` and ``p`` predictors ``X``."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2:
            raise InvalidArgumentError(f"X must be 2-D, got shape {X.shape}")
        if y.ndim != 1:
            raise InvalidArgumentError(f"y must be 1-D, got shape {y.shape}")
        if X.shape[0] != y.shape[0]:
            raise InvalidArgumentError(
                f"X has {X.shape[0]} rows but y has length {y.shape[0]}")
        if X.shape[0] < 2:
            raise InvalidArgumentError("need at least 2 samples")
        if X.shape[1] < 1:
            raise InvalidArgumentError("need at least 1 predictor")
        if not np.all(np.isfinite(X)):
            raise InvalidArgumentError("X contains non-finite values")
        if not np.all(np.isfinite(y)):
            raise InvalidArgumentError("y contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def standardized(self):
        """Return ``(dataset, center, scale)`` with ``y`` centered and scaled to unit variance."""
        center = float(self.y.mean())
        scale = float(self.y.std())
        if not scale > 0:
            raise InvalidArgumentError("y is constant; cannot standardize")
        return Dataset(self.X, (self.y - center) / scale), center, scale


@dataclass(frozen=True)
class Hyperparams:
    """Prior hyperparameters.

    ``nu ~ Gam(a_nu, b_nu)``, ``lam ~ Gam(a_lambda, b_lambda)`` (shape/rate) and
    ``gamma0 ~ N(mu_gamma, v_gamma)``.
    """

    a_nu: float = 1.0
    b_nu: float = 1.0
    a_lambda: float = 1.0
    b_lambda: float = 1.0
    mu_gamma: float = 0.0
    v_gamma: float = 1.0

    def __post_init__(self):
        for name in ("a_nu", "b_nu", "a_lambda", "b_lambda", "v_gamma"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise InvalidArgumentError(f"{name} must be a positive finite number, got {value}")
        if not np.isfinite(self.mu_gamma):
            raise InvalidArgumentError(f"mu_gamma must be finite, got {self.mu_gamma}")

    @classmethod
    def default(cls, p, k0=None, **overrides):
        """Weakly informative defaults with ``mu_gamma`` set so that ``k0`` predictors are expected a priori.

        ``k0`` defaults to ``min(5, p / 2)`` and must lie strictly between 0 and ``p``.
        """
        if k0 is None:
            k0 = min(5.0, p / 2.0)
        if not 0 < k0 < p:
            raise InvalidArgumentError(f"k0 must lie strictly between 0 and p={p}, got {k0}")
        mu = float(stats.norm.ppf(1.0 - k0 / p))
        return cls(mu_gamma=mu, **overrides)

    def as_array(self):
        return np.array([self.a_nu, self.b_nu, self.a_lambda, self.b_lambda,
                         self.mu_gamma, self.v_gamma])


@dataclass(frozen=True)
class McmcState:
    """One chain state. The inclusion mask is derived from ``gamma > gamma0``."""

    gamma: np.ndarray
    gamma0: float
    lam: float
    nu: float

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=float)
        if gamma.ndim != 1 or not np.all(np.isfinite(gamma)):
            raise InvalidArgumentError("gamma must be a finite vector")
        if not np.isfinite(self.gamma0):
            raise InvalidArgumentError("gamma0 must be finite")
        if not (self.lam > 0 and np.isfinite(self.lam)):
            raise InvalidArgumentError(f"lam must be positive, got {self.lam}")
        if not (self.nu > 0 and np.isfinite(self.nu)):
            raise InvalidArgumentError(f"nu must be positive, got {self.nu}")
        object.__setattr__(self, "gamma", gamma)

    @property
    def mask(self):
        return inclusion_mask(self.gamma, self.gamma0)

    @classmethod
    def initial(cls, p, hyper: Hyperparams):
        """Start at the prior means with an all-zero latent field."""
        return cls(np.zeros(p), hyper.mu_gamma,
                   hyper.a_lambda / hyper.b_lambda, hyper.a_nu / hyper.b_nu)


def inclusion_mask(gamma, gamma0):
    """Boolean inclusion indicators ``gamma > gamma0`` (ties are excluded)."""
    gamma = np.asarray(gamma, dtype=float)
    if not np.all(np.isfinite(gamma)) or not np.isfinite(gamma0):
        raise InvalidArgumentError("gamma and gamma0 must be finite")
    return gamma > gamma0


def _factor(M):
    """Lower Cholesky factor of ``M``, retrying with relative diagonal jitter."""
    scale = float(np.max(np.abs(np.diag(M)))) or 1.0
    for rel in FACTOR_JITTERS:
        A = M if rel == 0.0 else M + rel * scale * np.eye(M.shape[0])
        try:
            return linalg.cholesky(A, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
    raise NumericalError("Cholesky factorization failed",
                         jitters=[rel * scale for rel in FACTOR_JITTERS])


def lowrank_terms(AtA, Aty, yy, lam):
    """``(log det M, y' M^{-1} y)`` via the determinant and inversion lemmas.

    ``AtA = A'A`` and ``Aty = A'y`` for the design ``A = [1, X_S]`` with ``m``
    columns; only an ``m x m`` factorization is needed.
    """
    m = AtA.shape[0]
    L = _factor(AtA + lam * np.eye(m))
    w = linalg.solve_triangular(L, Aty, lower=True, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(L))) - m * np.log(lam)
    return float(logdet), float(yy - w @ w)


def dense_terms(A, y, lam):
    """``(log det M, y' M^{-1} y)`` from an explicit ``n x n`` factorization."""
    n = A.shape[0]
    L = _factor(np.eye(n) + (A @ A.T) / lam)
    w = linalg.solve_triangular(L, y, lower=True, check_finite=False)
    return float(2.0 * np.sum(np.log(np.diag(L)))), float(w @ w)


def gaussian_log_marginal(logdet, quad, n, nu):
    """Log density of ``N(y | 0, M / nu)`` given ``log det M`` and ``y' M^{-1} y``."""
    return -0.5 * n * LOG_2PI + 0.5 * n * np.log(nu) - 0.5 * logdet - 0.5 * nu * quad


def _check_path(path):
    if path not in ("auto", "lowrank", "dense"):
        raise InvalidArgumentError(f"unknown path {path!r}")


def _use_lowrank(path, m, n):
    return path == "lowrank" or (path == "auto" and m < n)


class CollapsedLikelihood:
    """Marginal likelihood of one dataset with the Gram matrix of ``[1, X]`` cached.

    Repeated evaluations for different masks cost ``O(k^3)`` on the low-rank
    path instead of ``O(n k^2)``.
    """

    def __init__(self, data: Dataset):
        self.data = data
        self.Z = np.column_stack([np.ones(data.n), data.X])
        self.G = self.Z.T @ self.Z
        self.c = self.Z.T @ data.y
        self.yy = float(data.y @ data.y)

    def index(self, mask):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (self.data.p,):
            raise InvalidArgumentError(
                f"mask has shape {mask.shape}, expected ({self.data.p},)")
        return np.concatenate([[0], np.flatnonzero(mask) + 1])

    def terms(self, mask, lam, path="auto"):
        _check_path(path)
        idx = self.index(mask)
        if _use_lowrank(path, idx.size, self.data.n):
            return lowrank_terms(self.G[np.ix_(idx, idx)], self.c[idx], self.yy, lam)
        return dense_terms(self.Z[:, idx], self.data.y, lam)

    def __call__(self, mask, lam, nu, path="auto"):
        logdet, quad = self.terms(mask, lam, path)
        return gaussian_log_marginal(logdet, quad, self.data.n, nu)


def log_marginal_likelihood(data: Dataset, mask, lam, nu, path="auto"):
    """Log density of ``y`` with ``beta`` and the intercept integrated out.

    Parameters
    ----------
    data : Dataset
    mask : array of bool, shape (p,)
        Inclusion indicators.
    lam, nu : float
        Slab precision scale and residual precision, both positive.
    path : {"auto", "lowrank", "dense"}
        ``"auto"`` uses the ``(k+1)``-dimensional low-rank identities when
        ``k + 1 < n`` and a dense ``n x n`` factorization otherwise.

    Raises
    ------
    NumericalError
        If the factorization fails after all jitter retries.
    """
    _check_path(path)
    if not (lam > 0 and nu > 0):
        raise InvalidArgumentError("lam and nu must be positive")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (data.p,):
        raise InvalidArgumentError(f"mask has shape {mask.shape}, expected ({data.p},)")
    A = np.column_stack([np.ones(data.n), data.X[:, mask]])
    if _use_lowrank(path, A.shape[1], data.n):
        logdet, quad = lowrank_terms(A.T @ A, A.T @ data.y, float(data.y @ data.y), lam)
    else:
        logdet, quad = dense_terms(A, data.y, lam)
    return float(gaussian_log_marginal(logdet, quad, data.n, nu))


def prior_inclusion_probability(sigma_jj, gamma0):
    """Prior probability ``1 - Phi(gamma0 / sqrt(sigma_jj))`` that predictor ``j`` is included."""
    sigma_jj = np.asarray(sigma_jj, dtype=float)
    if np.any(~(sigma_jj > 0)):
        raise InvalidArgumentError("sigma_jj must be positive")
    return special.ndtr(-np.asarray(gamma0, dtype=float) / np.sqrt(sigma_jj))


def expected_included(p, gamma0):
    """Expected number of included predictors under a unit-diagonal kernel."""
    if p < 1:
        raise InvalidArgumentError(f"p must be >= 1, got {p}")
    return p * float(special.ndtr(-gamma0))


def log_gamma_density(x, a, b):
    """Gamma log density in the shape/rate parameterization."""
    return a * np.log(b) - lgamma(a) + (a - 1.0) * np.log(x) - b * x


def log_normal_density(x, mu, var):
    return -0.5 * (LOG_2PI + np.log(var) + (x - mu) ** 2 / var)


def log_field_prior(gamma, chol):
    """``log N(gamma | 0, L L')`` for a lower-triangular factor ``L``."""
    z = linalg.solve_triangular(chol, gamma, lower=True, check_finite=False)
    return float(-0.5 * gamma.size * LOG_2PI - np.sum(np.log(np.diag(chol))) - 0.5 * z @ z)


def log_prior(state: McmcState, chol, hyper: Hyperparams):
    """Sum of the log priors of ``gamma``, ``gamma0``, ``lam`` and ``nu``."""
    return (log_field_prior(state.gamma, chol)
            + log_normal_density(state.gamma0, hyper.mu_gamma, hyper.v_gamma)
            + log_gamma_density(state.lam, hyper.a_lambda, hyper.b_lambda)
            + log_gamma_density(state.nu, hyper.a_nu, hyper.b_nu))


def log_joint(state: McmcState, data: Dataset, chol, hyper: Hyperparams):
    """Collapsed log joint density: marginal likelihood plus log priors."""
    return float(log_marginal_likelihood(data, state.mask, state.lam, state.nu)
                 + log_prior(state, chol, hyper))
