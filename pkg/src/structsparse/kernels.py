"""Structure kernels: positive-definite, unit-diagonal similarity matrices over predictors.

Every constructor returns a :class:`StructureKernel` whose matrix is
symmetric with ones on the diagonal and whose Cholesky factor reconstructs
it.  Kernels may be built from a reference panel rather than the fitted
predictor matrix, as long as the number of columns agrees.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import InvalidArgumentError, NumericalError

DEFAULT_JITTER = 1e-6
JITTER_STEPS = 7


@dataclass(frozen=True)
class StructureKernel:
    sigma: np.ndarray
    chol: np.ndarray
    jitter_applied: float = 0.0

    @property
    def p(self) -> int:
        return self.sigma.shape[0]

    def check(self, atol=1e-8):
        """Raise if the symmetry, unit-diagonal or reconstruction checks fail."""
        s = self.sigma
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise InvalidArgumentError(f"kernel must be square, got {s.shape}")
        if not np.allclose(s, s.T, rtol=0, atol=1e-12):
            raise InvalidArgumentError("kernel is not symmetric")
        if not np.allclose(np.diag(s), 1.0, rtol=0, atol=1e-12):
            raise InvalidArgumentError("kernel does not have a unit diagonal")
        if not np.allclose(self.chol @ self.chol.T, s, rtol=0, atol=atol):
            raise NumericalError("Cholesky factor does not reconstruct the kernel")
        return self


def ensure_pd(sigma, base=DEFAULT_JITTER):
    """Factor ``sigma + eps I`` for ``eps = base, 10 base, ..., 1e6 base`` and renormalize.

    The first jitter level at which the Cholesky factorization succeeds is
    kept.  The jittered matrix is rescaled back to a unit diagonal, which
    rescales its factor by the same diagonal.
    """
    sigma = np.array(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise InvalidArgumentError(f"sigma must be square, got {sigma.shape}")
    if not np.allclose(sigma, sigma.T, rtol=0, atol=1e-12 * max(1.0, np.abs(sigma).max())):
        raise InvalidArgumentError("sigma must be symmetric")
    if not base > 0:
        raise InvalidArgumentError(f"base jitter must be positive, got {base}")
    sigma = 0.5 * (sigma + sigma.T)
    eye = np.eye(sigma.shape[0])
    tried = []
    for step in range(JITTER_STEPS):
        eps = base * 10.0 ** step
        tried.append(eps)
        jittered = sigma + eps * eye
        try:
            chol = linalg.cholesky(jittered, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        d = np.sqrt(np.diag(jittered))
        normed = jittered / np.outer(d, d)
        np.fill_diagonal(normed, 1.0)
        return StructureKernel(normed, chol / d[:, None], eps).check()
    raise NumericalError(f"matrix is not positive definite after {len(tried)} jitter levels",
                         jitters=tried)


def correlation_kernel(X, base=DEFAULT_JITTER):
    """Absolute Pearson correlation between predictor columns."""
    X = np.asarray(X, dtype=float)
    centered = X - X.mean(axis=0)
    norms = np.sqrt(np.einsum("ij,ij->j", centered, centered))
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise InvalidArgumentError(f"column {zero[0]} has zero variance")
    R = np.abs((centered.T @ centered) / np.outer(norms, norms))
    np.fill_diagonal(R, 1.0)
    return ensure_pd(np.minimum(R, 1.0), base)


def covariance_kernel(X, base=DEFAULT_JITTER):
    """The Gram matrix ``X'X`` rescaled to a unit diagonal."""
    X = np.asarray(X, dtype=float)
    S = X.T @ X
    d = np.diag(S)
    zero = np.flatnonzero(d == 0)
    if zero.size:
        raise InvalidArgumentError(f"column {zero[0]} is identically zero")
    S = S / np.sqrt(np.outer(d, d))
    np.fill_diagonal(S, 1.0)
    return ensure_pd(S, base)


def identity_kernel(p):
    if p < 1:
        raise InvalidArgumentError(f"p must be >= 1, got {p}")
    eye = np.eye(p)
    return StructureKernel(eye, eye.copy(), 0.0)


def block_kernel(groups, rho):
    """Compound-symmetric blocks: 1 on the diagonal, ``rho`` within a group, 0 across groups."""
    groups = np.asarray(groups)
    if groups.ndim != 1 or groups.size < 1:
        raise InvalidArgumentError("groups must be a non-empty vector of labels")
    if not 0 <= rho < 1:
        raise InvalidArgumentError(f"rho must lie in [0, 1), got {rho}")
    sigma = np.where(groups[:, None] == groups[None, :], rho, 0.0)
    np.fill_diagonal(sigma, 1.0)
    return StructureKernel(sigma, np.linalg.cholesky(sigma), 0.0).check()


def contiguous_groups(p, block_size):
    """Group labels for consecutive blocks of ``block_size`` predictors."""
    if block_size < 1:
        raise InvalidArgumentError(f"block_size must be >= 1, got {block_size}")
    return np.arange(p) // block_size


def save_kernel(path, kernel: StructureKernel):
    """Write the dense kernel matrix with a ``#p P #jitter_applied EPS`` header."""
    with open(path, "w") as fh:
        fh.write(f"#p {kernel.p} #jitter_applied {kernel.jitter_applied!r}\n")
        for row in kernel.sigma:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_kernel(path):
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "#p" or header[2] != "#jitter_applied":
            raise InvalidArgumentError(f"{path}: malformed kernel header")
        p, jitter = int(header[1]), float(header[3])
        sigma = np.loadtxt(fh, ndmin=2)
    if sigma.shape != (p, p):
        raise InvalidArgumentError(f"{path}: header says p={p} but matrix is {sigma.shape}")
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{path}: stored kernel is not positive definite") from exc
    return StructureKernel(sigma, chol, jitter).check()
