"""Compiled MCMC sweep.

Same algorithm and the same order of generator calls as
:func:`structsparse.samplers.sweep`, compiled with numba.  Marginal
likelihood evaluations use the cached Gram matrix ``G = Z'Z`` of
``Z = [1, X]``, so a low-rank evaluation costs ``O(k^3)``.

Buffers are allocated by the caller (:mod:`structsparse.inference`) and
mutated in place.  Numerical failures are reported through ``err``:
``err[0] = 1`` and ``err[1]`` = sweep index.
"""
import math

import numpy as np
from numba import njit

from .model import FACTOR_JITTERS
from .samplers import LOG_LAMBDA_BOUND

_JIT = dict(cache=True, nogil=True)
_JITTERS = FACTOR_JITTERS
_LOG_2PI = math.log(2.0 * math.pi)
_TWO_PI = 2.0 * math.pi
_LOG_LAMBDA_BOUND = LOG_LAMBDA_BOUND

_GAMMA0 = 0
_LOG_LAMBDA = 1


@njit(**_JIT)
def _cholesky(M, m):
    for j in range(m):
        s = M[j, j]
        for k in range(j):
            s -= M[j, k] * M[j, k]
        if not s > 0.0:
            return False
        d = math.sqrt(s)
        M[j, j] = d
        for i in range(j + 1, m):
            t = M[i, j]
            for k in range(j):
                t -= M[i, k] * M[j, k]
            M[i, j] = t / d
    return True


@njit(**_JIT)
def _ml_terms(Z, y, G, c, yy, idx, m, lam, M, w):
    """Return ``(ok, log det M, y' M^{-1} y)`` for the design columns ``idx[:m]``."""
    n = Z.shape[0]
    lowrank = m < n
    dim = m if lowrank else n
    scale = 0.0
    if lowrank:
        for a in range(m):
            v = abs(G[idx[a], idx[a]] + lam)
            if v > scale:
                scale = v
    else:
        for i in range(n):
            s = 0.0
            for a in range(m):
                s += Z[i, idx[a]] * Z[i, idx[a]]
            v = abs(1.0 + s / lam)
            if v > scale:
                scale = v
    if scale == 0.0:
        scale = 1.0

    ok = False
    for r in range(len(_JITTERS)):
        jitter = _JITTERS[r] * scale
        if lowrank:
            for a in range(m):
                ia = idx[a]
                for b in range(a + 1):
                    M[a, b] = G[ia, idx[b]]
                M[a, a] += lam + jitter
        else:
            for i in range(n):
                for j in range(i + 1):
                    s = 0.0
                    for a in range(m):
                        s += Z[i, idx[a]] * Z[j, idx[a]]
                    M[i, j] = s / lam
                M[i, i] += 1.0 + jitter
        if _cholesky(M, dim):
            ok = True
            break
    if not ok:
        return False, 0.0, 0.0

    logdet = 0.0
    for a in range(dim):
        logdet += 2.0 * math.log(M[a, a])
    for a in range(dim):
        w[a] = c[idx[a]] if lowrank else y[a]
    for a in range(dim):
        t = w[a]
        for b in range(a):
            t -= M[a, b] * w[b]
        w[a] = t / M[a, a]
    ww = 0.0
    for a in range(dim):
        ww += w[a] * w[a]
    if lowrank:
        return True, logdet - m * math.log(lam), yy - ww
    return True, logdet, ww


@njit(**_JIT)
def _gauss_ml(logdet, quad, n, nu):
    return -0.5 * n * _LOG_2PI + 0.5 * n * math.log(nu) - 0.5 * logdet - 0.5 * nu * quad


@njit(**_JIT)
def _set_index(gamma, g0, idx):
    m = 1
    idx[0] = 0
    for j in range(gamma.size):
        if gamma[j] > g0:
            idx[m] = j + 1
            m += 1
    return m


@njit(**_JIT)
def _same_index(a, ma, b, mb):
    if ma != mb:
        return False
    for i in range(ma):
        if a[i] != b[i]:
            return False
    return True


@njit(**_JIT)
def _logml(Z, y, G, c, yy, idx, m, lam, nu, M, w, err):
    ok, logdet, quad = _ml_terms(Z, y, G, c, yy, idx, m, lam, M, w)
    if not ok:
        err[0] = 1
        return -np.inf
    return _gauss_ml(logdet, quad, Z.shape[0], nu)


@njit(**_JIT)
def _target(kind, x, Z, y, G, c, yy, hyper, gamma, lam, nu, prior_only,
            idx, cur_idx, cur_m, cur_ll, M, w, err):
    if kind == _GAMMA0:
        mu, var = hyper[4], hyper[5]
        value = -0.5 * (_LOG_2PI + math.log(var) + (x - mu) ** 2 / var)
        if not prior_only:
            m = _set_index(gamma, x, idx)
            if _same_index(idx, m, cur_idx, cur_m):
                value += cur_ll
            else:
                value += _logml(Z, y, G, c, yy, idx, m, lam, nu, M, w, err)
        return value
    if not abs(x) <= _LOG_LAMBDA_BOUND:
        return -np.inf
    lam_x = math.exp(x)
    value = hyper[2] * x - hyper[3] * lam_x
    if not prior_only:
        value += _logml(Z, y, G, c, yy, cur_idx, cur_m, lam_x, nu, M, w, err)
    return value


@njit(**_JIT)
def _slice(kind, x0, width, max_doublings, rng, Z, y, G, c, yy, hyper, gamma, lam, nu,
           prior_only, idx, cur_idx, cur_m, cur_ll, M, w, err, diag):
    f0 = _target(kind, x0, Z, y, G, c, yy, hyper, gamma, lam, nu, prior_only,
                 idx, cur_idx, cur_m, cur_ll, M, w, err)
    logy = f0 + math.log(rng.random())
    left = x0 - width * rng.random()
    right = left + width
    f_left = _target(kind, left, Z, y, G, c, yy, hyper, gamma, lam, nu, prior_only,
                     idx, cur_idx, cur_m, cur_ll, M, w, err)
    f_right = _target(kind, right, Z, y, G, c, yy, hyper, gamma, lam, nu, prior_only,
                      idx, cur_idx, cur_m, cur_ll, M, w, err)
    evals = 2
    budget = max_doublings
    doublings = 0
    while budget > 0 and (logy < f_left or logy < f_right):
        if rng.random() < 0.5:
            left -= right - left
            f_left = _target(kind, left, Z, y, G, c, yy, hyper, gamma, lam, nu, prior_only,
                             idx, cur_idx, cur_m, cur_ll, M, w, err)
        else:
            right += right - left
            f_right = _target(kind, right, Z, y, G, c, yy, hyper, gamma, lam, nu, prior_only,
                              idx, cur_idx, cur_m, cur_ll, M, w, err)
        evals += 1
        budget -= 1
        doublings += 1

    lo = left
    hi = right
    while True:
        x1 = lo + (hi - lo) * rng.random()
        f1 = _target(kind, x1, Z, y, G, c, yy, hyper, gamma, lam, nu, prior_only,
                     idx, cur_idx, cur_m, cur_ll, M, w, err)
        evals += 1
        if err[0] != 0:
            return x0
        if logy < f1:
            accept = True
            if doublings > 0:
                a_left = left
                a_right = right
                differ = False
                while a_right - a_left > 1.1 * width:
                    mid = 0.5 * (a_left + a_right)
                    if (x0 < mid) != (x1 < mid):
                        differ = True
                    if x1 < mid:
                        a_right = mid
                    else:
                        a_left = mid
                    if differ:
                        fa = _target(kind, a_left, Z, y, G, c, yy, hyper, gamma, lam, nu,
                                     prior_only, idx, cur_idx, cur_m, cur_ll, M, w, err)
                        evals += 1
                        if logy >= fa:
                            fb = _target(kind, a_right, Z, y, G, c, yy, hyper, gamma, lam, nu,
                                         prior_only, idx, cur_idx, cur_m, cur_ll, M, w, err)
                            evals += 1
                            if logy >= fb:
                                accept = False
                                break
            if accept:
                diag[1] += doublings
                diag[2] += evals
                return x1
        if x1 < x0:
            lo = x1
        else:
            hi = x1


@njit(**_JIT)
def _log_joint(gamma, L, logdiag_sum, g0, lam, nu, hyper, ml, prior_only, zbuf):
    p = gamma.size
    for i in range(p):
        t = gamma[i]
        for k in range(i):
            t -= L[i, k] * zbuf[k]
        zbuf[i] = t / L[i, i]
    zz = 0.0
    for i in range(p):
        zz += zbuf[i] * zbuf[i]
    a_nu, b_nu, a_lam, b_lam, mu, var = hyper[0], hyper[1], hyper[2], hyper[3], hyper[4], hyper[5]
    value = -0.5 * p * _LOG_2PI - logdiag_sum - 0.5 * zz
    value += -0.5 * (_LOG_2PI + math.log(var) + (g0 - mu) ** 2 / var)
    value += a_lam * math.log(b_lam) - math.lgamma(a_lam) + (a_lam - 1.0) * math.log(lam) - b_lam * lam
    value += a_nu * math.log(b_nu) - math.lgamma(a_nu) + (a_nu - 1.0) * math.log(nu) - b_nu * nu
    if not prior_only:
        value += ml
    return value


@njit(**_JIT)
def run_sweeps(Z, y, G, c, yy, L, hyper, gamma, st, n_sweeps, thin, record,
               w_gamma0, w_loglam, dbl_gamma0, dbl_loglam, prior_only, rng,
               trace, counts, best_mask, best, diag, err, masks, latent):
    """Run ``n_sweeps`` sweeps from ``(gamma, st = [gamma0, lam, nu])`` in place.

    When ``record`` is true, every ``thin``-th sweep is written to ``trace``
    (gamma0, lam, nu, included count, log joint), inclusion counts are
    accumulated, and the best-log-joint mask is tracked.  ``masks`` receives
    each recorded mask and ``latent`` each recorded field when they have
    rows; pass ``(0, p)`` arrays to skip.
    """
    n = Z.shape[0]
    p = gamma.size
    dim = max(n, p + 1)
    M = np.empty((dim, dim))
    w = np.empty(dim)
    idx = np.empty(p + 1, dtype=np.int64)
    cur_idx = np.empty(p + 1, dtype=np.int64)
    prop = np.empty(p)
    nu_aux = np.empty(p)
    zbuf = np.empty(p)
    logdiag_sum = 0.0
    for i in range(p):
        logdiag_sum += math.log(L[i, i])
    a_nu, b_nu = hyper[0], hyper[1]

    g0, lam, nu = st[0], st[1], st[2]
    cur_m = _set_index(gamma, g0, cur_idx)
    cur_ll = 0.0
    if not prior_only:
        cur_ll = _logml(Z, y, G, c, yy, cur_idx, cur_m, lam, nu, M, w, err)
    row = 0

    for it in range(n_sweeps):
        if err[0] != 0:
            err[1] = it
            break
        # gamma: elliptical slice sampling
        zdraw = rng.standard_normal(p)
        for i in range(p):
            s = 0.0
            for k in range(i + 1):
                s += L[i, k] * zdraw[k]
            nu_aux[i] = s
        threshold = cur_ll + math.log(rng.random())
        theta = _TWO_PI * rng.random()
        lo = theta - _TWO_PI
        hi = theta
        while True:
            diag[0] += 1.0
            ct = math.cos(theta)
            sn = math.sin(theta)
            for i in range(p):
                prop[i] = gamma[i] * ct + nu_aux[i] * sn
            if prior_only:
                ll = 0.0
                m = 0
            else:
                m = _set_index(prop, g0, idx)
                if _same_index(idx, m, cur_idx, cur_m):
                    ll = cur_ll
                else:
                    ll = _logml(Z, y, G, c, yy, idx, m, lam, nu, M, w, err)
            if ll > threshold:
                for i in range(p):
                    gamma[i] = prop[i]
                cur_ll = ll
                break
            if theta < 0.0:
                lo = theta
            else:
                hi = theta
            theta = lo + (hi - lo) * rng.random()
        cur_m = _set_index(gamma, g0, cur_idx)

        # gamma0
        g0 = _slice(_GAMMA0, g0, w_gamma0, dbl_gamma0, rng, Z, y, G, c, yy, hyper, gamma,
                    lam, nu, prior_only, idx, cur_idx, cur_m, cur_ll, M, w, err, diag)
        cur_m = _set_index(gamma, g0, cur_idx)

        # lam, sampled on the log scale
        lam = math.exp(_slice(_LOG_LAMBDA, math.log(lam), w_loglam, dbl_loglam, rng, Z, y, G,
                              c, yy, hyper, gamma, lam, nu, prior_only, idx, cur_idx, cur_m,
                              cur_ll, M, w, err, diag))

        # nu: conjugate gamma draw
        if prior_only:
            nu = rng.standard_gamma(a_nu) / b_nu
            cur_ll = 0.0
        else:
            ok, logdet, quad = _ml_terms(Z, y, G, c, yy, cur_idx, cur_m, lam, M, w)
            if not ok:
                err[0] = 1
                err[1] = it
                break
            nu = rng.standard_gamma(a_nu + 0.5 * n) / (b_nu + 0.5 * quad)
            cur_ll = _gauss_ml(logdet, quad, n, nu)

        if err[0] != 0:
            err[1] = it
            break
        if record and (it + 1) % thin == 0:
            lj = _log_joint(gamma, L, logdiag_sum, g0, lam, nu, hyper, cur_ll, prior_only, zbuf)
            k = cur_m - 1
            trace[row, 0] = g0
            trace[row, 1] = lam
            trace[row, 2] = nu
            trace[row, 3] = k
            trace[row, 4] = lj
            row += 1
            for a in range(1, cur_m):
                counts[cur_idx[a] - 1] += 1
            if masks.shape[0] > 0:
                for a in range(1, cur_m):
                    masks[row - 1, cur_idx[a] - 1] = 1
            if latent.shape[0] > 0:
                for j in range(p):
                    latent[row - 1, j] = gamma[j]
            if lj > best[0]:
                best[0] = lj
                for j in range(p):
                    best_mask[j] = False
                for a in range(1, cur_m):
                    best_mask[cur_idx[a] - 1] = True

    st[0] = g0
    st[1] = lam
    st[2] = nu
    return row
