"""Synthetic genotypes and simulated quantitative traits with known causal predictors."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .errors import InvalidArgumentError, NumericalError

MAX_RESAMPLES = 100


@dataclass(frozen=True)
class GenotypeSpec:
    """Block-correlated genotype design.

    Columns are split into consecutive blocks of ``block_size`` (the last
    block may be short).  Within a block the latent liabilities share
    correlation ``rho``; minor-allele frequencies are uniform on
    ``[maf_low, maf_high]``.
    """

    n: int
    p: int
    block_size: int = 10
    rho: float = 0.9
    maf_low: float = 0.05
    maf_high: float = 0.5

    def __post_init__(self):
        if self.n < 2 or self.p < 1:
            raise InvalidArgumentError(f"need n >= 2 and p >= 1, got n={self.n}, p={self.p}")
        if self.block_size < 1:
            raise InvalidArgumentError(f"block_size must be >= 1, got {self.block_size}")
        if not 0 <= self.rho < 1:
            raise InvalidArgumentError(f"rho must lie in [0, 1), got {self.rho}")
        if not 0 < self.maf_low <= self.maf_high <= 0.5:
            raise InvalidArgumentError(
                f"need 0 < maf_low <= maf_high <= 0.5, got [{self.maf_low}, {self.maf_high}]")


@dataclass(frozen=True)
class SimTruth:
    """Ground truth of one simulated trait.

    ``causal_indices`` index columns of the observed matrix.  For SimTag
    replicates, ``removed_indices`` index the full matrix the trait was
    generated from and ``observed_columns[j]`` is the full-matrix column of
    observed column ``j``.
    """

    causal_indices: tuple
    effects: tuple
    removed_indices: tuple = ()
    removed_effects: tuple = ()
    observed_columns: tuple | None = field(default=None)

    def __post_init__(self):
        if len(self.causal_indices) != len(self.effects):
            raise InvalidArgumentError("causal_indices and effects differ in length")
        if len(self.causal_indices) < 1:
            raise InvalidArgumentError("at least one causal predictor must remain observed")

    def indicator(self, p):
        truth = np.zeros(p, dtype=bool)
        truth[list(self.causal_indices)] = True
        return truth

    def to_json(self):
        return json.dumps({
            "causal_indices": [int(i) for i in self.causal_indices],
            "effects": [float(b) for b in self.effects],
            "removed_indices": [int(i) for i in self.removed_indices],
            "removed_effects": [float(b) for b in self.removed_effects],
            "observed_columns": (None if self.observed_columns is None
                                 else [int(i) for i in self.observed_columns]),
        }, indent=1)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        cols = d.get("observed_columns")
        return cls(tuple(d["causal_indices"]), tuple(d["effects"]),
                   tuple(d.get("removed_indices", ())), tuple(d.get("removed_effects", ())),
                   None if cols is None else tuple(cols))


def _block_latent(rng, n, size, rho):
    shared = rng.standard_normal(n)
    return np.sqrt(rho) * shared[:, None] + np.sqrt(1.0 - rho) * rng.standard_normal((n, size)), shared


def simulate_genotypes(spec: GenotypeSpec, rng):
    """Minor-allele counts in {0, 1, 2} from thresholded block-correlated Gaussians.

    Each column's liability is cut at the Hardy-Weinberg genotype quantiles
    of its minor-allele frequency ``f``: ``(1-f)^2`` for 0 copies and ``f^2``
    for 2.  A constant column is redrawn (keeping its block's shared
    factor) up to 100 times.
    """
    maf = rng.uniform(spec.maf_low, spec.maf_high, size=spec.p)
    lo_cut = special.ndtri((1.0 - maf) ** 2)
    hi_cut = special.ndtri(1.0 - maf ** 2)
    X = np.empty((spec.n, spec.p), dtype=np.int64)
    for start in range(0, spec.p, spec.block_size):
        stop = min(start + spec.block_size, spec.p)
        latent, shared = _block_latent(rng, spec.n, stop - start, spec.rho)
        for j in range(start, stop):
            z = latent[:, j - start]
            for _ in range(MAX_RESAMPLES + 1):
                col = (z > lo_cut[j]).astype(np.int64) + (z > hi_cut[j])
                if col.min() != col.max():
                    break
                z = np.sqrt(spec.rho) * shared + np.sqrt(1.0 - spec.rho) * rng.standard_normal(spec.n)
            else:
                raise NumericalError(f"column {j} stayed constant after {MAX_RESAMPLES} redraws")
            X[:, j] = col
    return X


def quantile_normalize(y):
    """Map ``y`` onto standard-normal quantiles ``Phi^{-1}((rank - 0.5) / n)``; ties share their average rank."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size < 2:
        raise InvalidArgumentError("need a vector with at least 2 entries")
    if np.all(y == y[0]):
        raise InvalidArgumentError("all entries are equal; ranks are undefined")
    ranks = stats.rankdata(y, method="average")
    return special.ndtri((ranks - 0.5) / y.size)


def _effects(rng, size):
    # Beta(0.1, 0.1) mapped affinely onto (-1, 1); clipping keeps the interval open
    b = 2.0 * rng.beta(0.1, 0.1, size=size) - 1.0
    return np.clip(b, np.nextafter(-1.0, 0.0), np.nextafter(1.0, 0.0))


def _draw_trait(X, count_range, min_count, rng):
    lo, hi = count_range
    lo = max(lo, min_count)
    if lo > hi:
        raise InvalidArgumentError(f"empty range [{lo}, {hi}] for the number of causal predictors")
    if hi > X.shape[1]:
        raise InvalidArgumentError(f"cannot pick {hi} causal predictors from {X.shape[1]} columns")
    q = int(rng.integers(lo, hi + 1))
    causal = np.sort(rng.choice(X.shape[1], size=q, replace=False))
    effects = _effects(rng, q)
    y = X[:, causal] @ effects + rng.standard_normal(X.shape[0])
    return quantile_normalize(y), causal, effects


def sim1(X, q_range=(2, 6), rng=None):
    """Sim1 trait: ``q`` uniform causal columns, Beta(0.1, 0.1) effects, unit noise, quantile normalized."""
    X = np.asarray(X, dtype=float)
    y, causal, effects = _draw_trait(X, q_range, 1, rng)
    return y, SimTruth(tuple(causal.tolist()), tuple(effects.tolist()))


def simtag(X_full, s_range=(2, 8), remove=1, rng=None):
    """SimTag trait: generate from ``s`` causal columns, then drop ``remove`` of them from the observed matrix.

    Returns ``(y, X_observed, truth)``.  ``s`` is drawn uniformly from the
    part of ``s_range`` with ``s > remove``.
    """
    X_full = np.asarray(X_full)
    if remove < 0:
        raise InvalidArgumentError(f"remove must be >= 0, got {remove}")
    if s_range[1] < remove + 1:
        raise InvalidArgumentError(
            f"s_max={s_range[1]} leaves no observed causal predictor after removing {remove}")
    y, causal, effects = _draw_trait(X_full.astype(float), s_range, remove + 1, rng)
    if remove == 0:
        keep_pos = np.arange(causal.size)
        removed_pos = np.array([], dtype=np.int64)
    else:
        removed_pos = np.sort(rng.choice(causal.size, size=remove, replace=False))
        keep_pos = np.setdiff1d(np.arange(causal.size), removed_pos)
    removed = causal[removed_pos]
    observed = np.setdiff1d(np.arange(X_full.shape[1]), removed)
    new_index = {int(c): i for i, c in enumerate(observed)}
    truth = SimTruth(
        causal_indices=tuple(new_index[int(c)] for c in causal[keep_pos]),
        effects=tuple(effects[keep_pos].tolist()),
        removed_indices=tuple(removed.tolist()),
        removed_effects=tuple(effects[removed_pos].tolist()),
        observed_columns=tuple(observed.tolist()),
    )
    return y, X_full[:, observed], truth
