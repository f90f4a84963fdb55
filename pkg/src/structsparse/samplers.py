"""MCMC transition operators.

* :func:`ess_update` -- elliptical slice sampling for the latent field.
* :func:`slice_update_scalar` -- univariate slice sampling with the
  doubling procedure and its reversibility test (Neal, 2003).
* :func:`update_gamma0`, :func:`update_lambda`, :func:`update_nu` -- the
  model-specific conditional updates built on the two samplers above.

These are the reference implementations.  :mod:`structsparse._engine`
compiles the same sweep with numba and draws from the generator in the
same order, so both produce the same chain from the same seed.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import InvalidArgumentError, InvalidStateError
from .model import (CollapsedLikelihood, Hyperparams, McmcState, gaussian_log_marginal,
                    inclusion_mask, log_normal_density)

TWO_PI = 2.0 * np.pi
# Support of log lam.  Beyond it the likelihood is numerically unrepresentable
# (lam underflows or M overflows) and its posterior mass is negligible.
LOG_LAMBDA_BOUND = 500.0


def make_rng(seed):
    """A PCG64 generator; the same seed and call sequence give bit-identical draws."""
    return np.random.Generator(np.random.PCG64(seed))


def derived_seed(seed, index):
    """Independent 64-bit seed for item ``index`` of a batch driven by ``seed``."""
    state = np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)
    return int(state[0])


@dataclass(frozen=True)
class SliceConfig:
    initial_width: float = 1.0
    max_doublings: int = 10

    def __post_init__(self):
        if not self.initial_width > 0:
            raise InvalidArgumentError(f"initial_width must be positive, got {self.initial_width}")
        if self.max_doublings < 1:
            raise InvalidArgumentError(f"max_doublings must be >= 1, got {self.max_doublings}")


class SliceStep(NamedTuple):
    x: float
    logdensity: float
    doublings: int
    evaluations: int


def ellipse_point(gamma, nu_aux, theta):
    return gamma * np.cos(theta) + nu_aux * np.sin(theta)


def ess_update(gamma, chol, loglik, rng, current_loglik=None):
    """One elliptical slice sampling step for ``gamma ~ N(0, chol chol')``.

    Returns ``(gamma_new, loglik_new, proposals_tried)``.  The bracket is
    ``[theta - 2 pi, theta]`` and shrinks toward ``theta = 0``, where the
    current state is always acceptable, so the loop terminates.
    """
    gamma = np.asarray(gamma, dtype=float)
    cur = loglik(gamma) if current_loglik is None else current_loglik
    if not np.isfinite(cur):
        raise InvalidStateError("log-likelihood at the current state is not finite")
    nu_aux = chol @ rng.standard_normal(gamma.size)
    threshold = cur + np.log(rng.random())
    theta = TWO_PI * rng.random()
    lo, hi = theta - TWO_PI, theta
    tried = 0
    while True:
        tried += 1
        proposal = ellipse_point(gamma, nu_aux, theta)
        ll = loglik(proposal)
        if ll > threshold:
            return proposal, ll, tried
        if theta < 0:
            lo = theta
        else:
            hi = theta
        theta = lo + (hi - lo) * rng.random()


def _doubling_accepts(x0, x1, logy, left, right, width, logdensity):
    # Neal (2003), fig. 6: could the doubling procedure started from x1 have produced the same interval?
    differ = False
    while right - left > 1.1 * width:
        mid = 0.5 * (left + right)
        if (x0 < mid) != (x1 < mid):
            differ = True
        if x1 < mid:
            right = mid
        else:
            left = mid
        if differ and logy >= logdensity(left) and logy >= logdensity(right):
            return False
    return True


def slice_update_scalar(x0, logdensity, cfg: SliceConfig, rng, current=None):
    """One slice sampling update of a scalar with interval doubling and shrinkage.

    ``logdensity`` may return ``-inf`` outside the support.  ``current`` is
    ``logdensity(x0)`` when the caller already knows it.
    """
    f0 = logdensity(x0) if current is None else current
    if not np.isfinite(f0):
        raise InvalidStateError(f"log density at x0={x0} is not finite")
    evaluations = 0

    def f(x):
        nonlocal evaluations
        evaluations += 1
        return logdensity(x)

    logy = f0 + np.log(rng.random())
    w = cfg.initial_width
    left = x0 - w * rng.random()
    right = left + w
    f_left, f_right = f(left), f(right)
    budget = cfg.max_doublings
    doublings = 0
    while budget > 0 and (logy < f_left or logy < f_right):
        if rng.random() < 0.5:
            left -= right - left
            f_left = f(left)
        else:
            right += right - left
            f_right = f(right)
        budget -= 1
        doublings += 1

    lo, hi = left, right
    while True:
        x1 = lo + (hi - lo) * rng.random()
        f1 = f(x1)
        if logy < f1 and (doublings == 0
                          or _doubling_accepts(x0, x1, logy, left, right, w, f)):
            return SliceStep(float(x1), float(f1), doublings, evaluations)
        if x1 < x0:
            lo = x1
        else:
            hi = x1


def _lambda_log_target(lik, mask, nu, hyper, prior_only):
    a, b = hyper.a_lambda, hyper.b_lambda

    def target(t):
        if not abs(t) <= LOG_LAMBDA_BOUND:
            return -np.inf
        lam = np.exp(t)
        # Gamma(a, b) density of lam times the Jacobian d lam / d t = lam
        value = a * t - b * lam
        if not prior_only:
            value += lik(mask, lam, nu)
        return value

    return target


def update_gamma0(state: McmcState, lik: CollapsedLikelihood, hyper: Hyperparams,
                  cfg: SliceConfig, rng, prior_only=False):
    """Slice-sample the probit threshold given the latent field, ``lam`` and ``nu``."""

    def target(g0):
        value = log_normal_density(g0, hyper.mu_gamma, hyper.v_gamma)
        if not prior_only:
            value += lik(state.gamma > g0, state.lam, state.nu)
        return value

    step = slice_update_scalar(state.gamma0, target, cfg, rng)
    return replace(state, gamma0=step.x), step


def update_lambda(state: McmcState, lik: CollapsedLikelihood, hyper: Hyperparams,
                  cfg: SliceConfig, rng, prior_only=False):
    """Slice-sample ``log lam``; positivity holds by construction."""
    target = _lambda_log_target(lik, state.mask, state.nu, hyper, prior_only)
    step = slice_update_scalar(np.log(state.lam), target, cfg, rng)
    return replace(state, lam=float(np.exp(step.x))), step


def nu_posterior(state: McmcState, lik: CollapsedLikelihood, hyper: Hyperparams):
    """Shape and rate ``(a_n, b_n)`` of the conjugate gamma conditional of ``nu``."""
    _, quad = lik.terms(state.mask, state.lam)
    return hyper.a_nu + 0.5 * lik.data.n, hyper.b_nu + 0.5 * quad


def update_nu(state: McmcState, lik: CollapsedLikelihood, hyper: Hyperparams, rng,
              prior_only=False):
    """Exact Gibbs draw of the residual precision."""
    if prior_only:
        shape, rate = hyper.a_nu, hyper.b_nu
    else:
        shape, rate = nu_posterior(state, lik, hyper)
    return replace(state, nu=float(rng.standard_gamma(shape) / rate))


@dataclass(frozen=True)
class SweepConfig:
    gamma0: SliceConfig = SliceConfig()
    log_lambda: SliceConfig = SliceConfig()


class SweepInfo(NamedTuple):
    ess_proposals: int
    slice_doublings: int
    slice_evaluations: int


def sweep(state: McmcState, lik: CollapsedLikelihood, chol, hyper: Hyperparams,
          cfg: SweepConfig, rng, prior_only=False):
    """One full sweep in the order gamma (ESS), gamma0, lam, nu."""
    n = lik.data.n
    cache = {}

    def field_loglik(gamma):
        if prior_only:
            return 0.0
        mask = inclusion_mask(gamma, state.gamma0)
        key = mask.tobytes()
        if key not in cache:
            logdet, quad = lik.terms(mask, state.lam)
            cache[key] = gaussian_log_marginal(logdet, quad, n, state.nu)
        return cache[key]

    gamma, _, proposals = ess_update(state.gamma, chol, field_loglik, rng)
    state = replace(state, gamma=gamma)
    state, g0_step = update_gamma0(state, lik, hyper, cfg.gamma0, rng, prior_only)
    state, lam_step = update_lambda(state, lik, hyper, cfg.log_lambda, rng, prior_only)
    state = update_nu(state, lik, hyper, rng, prior_only)
    info = SweepInfo(proposals, g0_step.doublings + lam_step.doublings,
                     g0_step.evaluations + lam_step.evaluations)
    return state, info
