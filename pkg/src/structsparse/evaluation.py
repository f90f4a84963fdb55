"""Precision-recall scoring against simulation truth and permutation-based FDR calibration."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NotFoundError


@dataclass(frozen=True)
class ScoredPredictors:
    """Scores (PPI or absolute effect size) for one replicate, with causal-only truth."""

    scores: np.ndarray
    truth: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        truth = np.asarray(self.truth, dtype=bool)
        if scores.shape != truth.shape or scores.ndim != 1:
            raise InvalidArgumentError(
                f"scores {scores.shape} and truth {truth.shape} must be vectors of equal length")
        if not np.all(np.isfinite(scores)):
            raise InvalidArgumentError("scores must be finite")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "truth", truth)


@dataclass(frozen=True)
class PRCurve:
    """One row per distinct score, in decreasing order; a predictor is called at threshold ``t`` if its score is ``>= t``."""

    thresholds: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    n_positive: int

    @property
    def precision(self):
        return self.tp / (self.tp + self.fp)

    @property
    def recall(self):
        return self.tp / self.n_positive

    def points(self):
        return list(zip(self.recall.tolist(), self.precision.tolist()))


def pr_curve(scored):
    """Pool replicates and sweep the threshold over every distinct score."""
    scored = list(scored)
    if not scored:
        raise InvalidArgumentError("no replicates given")
    scores = np.concatenate([s.scores for s in scored])
    truth = np.concatenate([s.truth for s in scored])
    n_pos = int(truth.sum())
    if n_pos == 0:
        raise InvalidArgumentError("truth contains no causal predictors")
    order = np.argsort(-scores, kind="stable")
    s_sorted, t_sorted = scores[order], truth[order]
    tp_cum = np.cumsum(t_sorted)
    fp_cum = np.cumsum(~t_sorted)
    # last position of each run of equal scores
    last = np.flatnonzero(np.append(s_sorted[1:] != s_sorted[:-1], True))
    return PRCurve(s_sorted[last], tp_cum[last], fp_cum[last], n_pos)


def average_precision(curve: PRCurve):
    """Area under the step PR curve: sum of precision times recall increment."""
    recall = np.concatenate([[0.0], curve.recall])
    return float(np.sum(np.diff(recall) * curve.precision))


def permute_responses(y, rng):
    """A uniformly random permutation of the response (sample labels shuffled)."""
    y = np.asarray(y)
    if y.shape[0] < 2:
        raise InvalidArgumentError("need at least 2 samples to permute")
    return rng.permutation(y)


@dataclass(frozen=True)
class FdrCurve:
    """Empirical FDR over thresholds sorted in decreasing order.

    ``fdr`` is the clipped count ratio at each threshold; ``qvalue`` is its
    running minimum over all less stringent thresholds, which is monotone.
    """

    thresholds: np.ndarray
    real_counts: np.ndarray
    perm_counts: np.ndarray
    fdr: np.ndarray
    qvalue: np.ndarray

    @classmethod
    def from_arrays(cls, thresholds, fdr, real_counts=None, perm_counts=None):
        thresholds = np.asarray(thresholds, dtype=float)
        fdr = np.asarray(fdr, dtype=float)
        order = np.argsort(-thresholds, kind="stable")
        zeros = np.zeros(thresholds.size)
        real = zeros if real_counts is None else np.asarray(real_counts, dtype=float)
        perm = zeros if perm_counts is None else np.asarray(perm_counts, dtype=float)
        fdr = fdr[order]
        return cls(thresholds[order], real[order], perm[order], fdr,
                   np.minimum.accumulate(fdr[::-1])[::-1])


def _exceed_counts(pool, thresholds):
    pool = np.sort(pool)
    return pool.size - np.searchsorted(pool, thresholds, side="right")


def empirical_fdr(real_scores, perm_scores, thresholds=None, n_perm=1):
    """``#(perm > c) / max(1, #(real > c))`` at each threshold ``c``, clipped to [0, 1].

    ``perm_scores`` pools ``n_perm`` complete permutations, each with as many
    tests as ``real_scores``; permuted counts are averaged over them.
    Thresholds default to every distinct pooled score.
    """
    real = np.asarray(real_scores, dtype=float).ravel()
    perm = np.asarray(perm_scores, dtype=float).ravel()
    if real.size == 0 or perm.size == 0:
        raise InvalidArgumentError("score pools must be non-empty")
    if perm.size != n_perm * real.size:
        raise InvalidArgumentError(
            f"{perm.size} permuted scores do not match {n_perm} x {real.size} real tests")
    if thresholds is None:
        thresholds = np.unique(np.concatenate([real, perm]))
    thresholds = np.sort(np.asarray(thresholds, dtype=float))[::-1]
    real_counts = _exceed_counts(real, thresholds).astype(float)
    perm_counts = _exceed_counts(perm, thresholds) / n_perm
    fdr = np.clip(perm_counts / np.maximum(1.0, real_counts), 0.0, 1.0)
    return FdrCurve(thresholds, real_counts, perm_counts, fdr,
                    np.minimum.accumulate(fdr[::-1])[::-1])


def threshold_for_fdr(curve: FdrCurve, target):
    """Smallest threshold whose estimated FDR is at most ``target``."""
    if curve.thresholds.size == 0:
        raise InvalidArgumentError("empty FDR curve")
    ok = curve.fdr <= target
    if not ok.any():
        raise NotFoundError(f"no threshold attains FDR <= {target}")
    return float(curve.thresholds[ok].min())


def write_pr_table(path, curve: PRCurve):
    with open(path, "w") as fh:
        fh.write("threshold\ttp\tfp\tprecision\trecall\n")
        for t, tp, fp, pr, rc in zip(curve.thresholds, curve.tp, curve.fp,
                                     curve.precision, curve.recall):
            fh.write(f"{float(t)!r}\t{int(tp)}\t{int(fp)}\t{float(pr)!r}\t{float(rc)!r}\n")


def write_fdr_table(path, curve: FdrCurve):
    with open(path, "w") as fh:
        fh.write("threshold\treal_count\tperm_count\tfdr\tqvalue\n")
        for row in zip(curve.thresholds, curve.real_counts, curve.perm_counts,
                       curve.fdr, curve.qvalue):
            fh.write("\t".join(repr(float(v)) for v in row) + "\n")
