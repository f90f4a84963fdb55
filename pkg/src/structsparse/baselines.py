"""Forward stepwise regression with a BIC stopping rule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .model import Dataset

# A candidate whose residual norm after projecting out the current design
# falls below this fraction of its own norm is treated as collinear.
COLLINEAR_TOL = 1e-10
RSS_FLOOR = 1e-24


@dataclass(frozen=True)
class FsrResult:
    """Greedy path accepted by :func:`forward_stepwise_bic`.

    ``bic_trace[0]`` is the intercept-only BIC and ``bic_trace[i]`` the BIC
    after the ``i``-th accepted predictor.  ``coefficients`` are the final
    least-squares slopes in the order of ``selected``.
    """

    selected: tuple
    coefficients: np.ndarray
    intercept: float
    bic_trace: np.ndarray
    skipped: dict = field(default_factory=dict)

    def scores(self, p):
        """``|coefficient|`` per predictor, zero for unselected ones."""
        out = np.zeros(p)
        out[list(self.selected)] = np.abs(self.coefficients)
        return out

    def records(self, p):
        """One ``(predictor_id, step, coefficient)`` row per predictor; ``step`` is 0 when unselected."""
        step = {j: i + 1 for i, j in enumerate(self.selected)}
        coef = dict(zip(self.selected, self.coefficients.tolist()))
        return [(j, step.get(j, 0), coef.get(j, 0.0)) for j in range(p)]


def bic(rss, n, k):
    if rss <= 0:
        return -np.inf
    return n * np.log(rss / n) + k * np.log(n)


def forward_stepwise_bic(data: Dataset, max_steps=None):
    """Greedy forward selection from the intercept-only model.

    Each round adds the excluded predictor giving the smallest residual sum
    of squares (ties go to the lowest index) and keeps it only if the BIC
    strictly improves.  ``skipped`` maps a round number to the candidates
    rejected there as collinear with the current design.
    """
    X, y = data.X, data.y
    n, p = X.shape
    if n <= 2:
        raise InvalidArgumentError(f"need n > 2, got n={n}")
    if max_steps is None:
        max_steps = min(p, n - 2)

    resid = y - y.mean()
    rss = tss = float(resid @ resid)
    trace = [bic(rss, n, 1)]
    selected = []
    skipped = {}
    # candidates residualized against the current design (Gram-Schmidt)
    Xr = X - X.mean(axis=0)
    norms0 = np.linalg.norm(Xr, axis=0)

    for rnd in range(max_steps):
        if not np.isfinite(trace[-1]):
            break
        col_norm = np.linalg.norm(Xr, axis=0)
        excluded = np.ones(p, dtype=bool)
        excluded[selected] = False
        collinear = excluded & (col_norm <= COLLINEAR_TOL * np.maximum(norms0, 1.0))
        if collinear.any():
            skipped[rnd] = np.flatnonzero(collinear).tolist()
        usable = excluded & ~collinear
        if not usable.any():
            break
        gain = np.full(p, -np.inf)
        proj = Xr[:, usable].T @ resid
        gain[usable] = proj ** 2 / col_norm[usable] ** 2
        j = int(np.argmax(gain))  # first maximum, i.e. lowest index
        new_rss = rss - gain[j]
        if new_rss <= RSS_FLOOR * tss:
            new_rss = 0.0  # exact fit up to rounding
        new_bic = bic(new_rss, n, len(selected) + 2)
        if not new_bic < trace[-1]:
            break
        q = Xr[:, j] / col_norm[j]
        resid = resid - q * (q @ resid)
        rss = float(resid @ resid) if new_rss > 0 else 0.0
        Xr = Xr - np.outer(q, q @ Xr)
        selected.append(j)
        trace.append(new_bic)

    A = np.column_stack([np.ones(n), X[:, selected]])
    beta = np.linalg.lstsq(A, y, rcond=None)[0]
    return FsrResult(tuple(selected), beta[1:], float(beta[0]), np.array(trace), skipped)


FSR_FIELDS = ("trait_id", "predictor_id", "step", "coefficient")


def write_fsr_records(path, results, trait_ids, p):
    """Tab-separated ``(trait_id, predictor_id, step, coefficient)`` rows, ``p`` per trait."""
    with open(path, "w") as fh:
        fh.write("\t".join(FSR_FIELDS) + "\n")
        for tid, res in zip(trait_ids, results):
            for j, step, coef in res.records(p):
                fh.write(f"{tid}\t{j}\t{step}\t{coef!r}\n")
