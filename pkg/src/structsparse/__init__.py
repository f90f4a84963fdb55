"""Bayesian structured sparse regression with a Gaussian-field spike-and-slab prior."""

__version__ = "0.1.0"

from .errors import (ChainError, InvalidArgumentError, InvalidStateError, NotFoundError,
                     NumericalError, StructSparseError)
from .kernels import (StructureKernel, block_kernel, correlation_kernel, covariance_kernel,
                      ensure_pd, identity_kernel)
from .model import (Dataset, Hyperparams, McmcState, expected_included, inclusion_mask,
                    log_joint, log_marginal_likelihood, prior_inclusion_probability)
from .inference import ChainSchedule, PosteriorSummary, fit_trait_batch, run_chain

__all__ = [
    "ChainError", "InvalidArgumentError", "InvalidStateError", "NotFoundError",
    "NumericalError", "StructSparseError",
    "StructureKernel", "block_kernel", "correlation_kernel", "covariance_kernel",
    "ensure_pd", "identity_kernel",
    "Dataset", "Hyperparams", "McmcState", "expected_included", "inclusion_mask",
    "log_joint", "log_marginal_likelihood", "prior_inclusion_probability",
    "ChainSchedule", "PosteriorSummary", "fit_trait_batch", "run_chain",
]
