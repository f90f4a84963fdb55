"""Chain orchestration, posterior summaries and their serialization."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .errors import ChainError, InvalidArgumentError, NumericalError
from .kernels import StructureKernel
from .model import (CollapsedLikelihood, Dataset, Hyperparams, McmcState, log_joint,
                    log_prior)
from .samplers import SweepConfig, make_rng, sweep

TRACE_FIELDS = ("gamma0", "lam", "nu", "included", "log_joint")
SUMMARY_SCHEMA = "structsparse.posterior/1"
PREDICTOR_FIELDS = ("trait_id", "predictor_id", "ppi", "map_included")


@dataclass(frozen=True)
class ChainSchedule:
    burn_in: int = 500
    collect: int = 1000
    thin: int = 1

    def __post_init__(self):
        if self.burn_in < 0:
            raise InvalidArgumentError(f"burn_in must be >= 0, got {self.burn_in}")
        if self.collect < 1:
            raise InvalidArgumentError(f"collect must be >= 1, got {self.collect}")
        if not 1 <= self.thin <= self.collect:
            raise InvalidArgumentError(f"thin must lie in [1, collect], got {self.thin}")

    @property
    def n_recorded(self):
        return self.collect // self.thin


@dataclass
class PosteriorSummary:
    """Result of one chain.

    ``ppi[j]`` is the fraction of recorded sweeps that included predictor
    ``j``; ``map_mask`` is the recorded mask with the largest log joint.
    The response was fit as ``(y - y_center) / y_scale``.  ``masks`` and
    ``latent`` hold the recorded masks and fields (one row per recorded
    sweep) when requested.
    """

    ppi: np.ndarray
    map_mask: np.ndarray
    map_log_joint: float
    traces: dict
    seed: int
    schedule: ChainSchedule
    y_center: float = 0.0
    y_scale: float = 1.0
    jitter_applied: float = 0.0
    diagnostics: dict = field(default_factory=dict)
    final_state: McmcState | None = None
    masks: np.ndarray | None = None
    latent: np.ndarray | None = None

    @property
    def p(self):
        return self.ppi.size


@dataclass(frozen=True)
class TraitFailure:
    """Placeholder for a trait whose chain failed inside :func:`fit_trait_batch`."""

    index: int
    error: str


def _prepare(data, kernel, hyper, k0, standardize):
    if kernel.p != data.p:
        raise InvalidArgumentError(f"kernel has dimension {kernel.p} but data has p={data.p}")
    if standardize:
        data, center, scale = data.standardized()
    else:
        center, scale = 0.0, 1.0
    if hyper is None:
        hyper = Hyperparams.default(data.p, k0)
    return data, hyper, center, scale


def run_chain(data: Dataset, kernel: StructureKernel, hyper: Hyperparams | None = None,
              schedule: ChainSchedule = ChainSchedule(), seed=0, *,
              config: SweepConfig = SweepConfig(), k0=None, standardize=True,
              prior_only=False, backend="numba", keep_masks=False,
              keep_latent=False):
    """Run one chain and summarize it.

    Parameters
    ----------
    data : Dataset
    kernel : StructureKernel
        Prior covariance of the latent field; dimension must equal ``data.p``.
    hyper : Hyperparams, optional
        Defaults to :meth:`Hyperparams.default` with ``k0``.
    schedule : ChainSchedule
    seed : int
    config : SweepConfig
        Slice widths and doubling limits for ``gamma0`` and ``log lam``.
    standardize : bool
        Center and scale ``y`` before fitting (the default).
    prior_only : bool
        Replace the likelihood by a constant; the chain then targets the prior.
    backend : {"numba", "python"}
        Compiled engine or the reference operators. Both give the same chain.
    keep_masks : bool
        Store every recorded mask as a ``uint8`` matrix in ``masks``.
    keep_latent : bool
        Store every recorded ``gamma`` in ``latent``.

    Raises
    ------
    ChainError
        If a factorization fails mid-chain; carries the sweep index and state.
    """
    data, hyper, center, scale = _prepare(data, kernel, hyper, k0, standardize)
    if backend == "numba":
        run = _run_numba
    elif backend == "python":
        run = _run_python
    else:
        raise InvalidArgumentError(f"unknown backend {backend!r}")
    masks = np.zeros((schedule.n_recorded if keep_masks else 0, data.p), dtype=np.uint8)
    latent = np.zeros((schedule.n_recorded if keep_latent else 0, data.p))
    ppi_counts, trace, best_mask, best, diag, final = run(
        data, kernel, hyper, schedule, seed, config, prior_only, masks, latent)
    n_rec = schedule.n_recorded
    total = schedule.burn_in + schedule.collect
    return PosteriorSummary(
        ppi=ppi_counts / n_rec,
        map_mask=best_mask,
        map_log_joint=float(best),
        traces={name: trace[:, i].copy() for i, name in enumerate(TRACE_FIELDS)},
        seed=int(seed),
        schedule=schedule,
        y_center=center,
        y_scale=scale,
        jitter_applied=kernel.jitter_applied,
        diagnostics={
            "ess_proposals_per_sweep": diag[0] / total,
            "slice_doublings_per_sweep": diag[1] / total,
            "slice_evaluations_per_sweep": diag[2] / total,
        },
        final_state=final,
        masks=masks if keep_masks else None,
        latent=latent if keep_latent else None,
    )


def _run_python(data, kernel, hyper, schedule, seed, config, prior_only, masks, latent):
    rng = make_rng(seed)
    lik = CollapsedLikelihood(data)
    state = McmcState.initial(data.p, hyper)
    counts = np.zeros(data.p)
    trace = np.empty((schedule.n_recorded, len(TRACE_FIELDS)))
    best, best_mask = -np.inf, np.zeros(data.p, dtype=bool)
    diag = np.zeros(3)
    row = 0
    total = schedule.burn_in + schedule.collect
    for it in range(total):
        try:
            state, info = sweep(state, lik, kernel.chol, hyper, config, rng, prior_only)
        except NumericalError as exc:
            raise ChainError(str(exc), it, state, exc.jitters) from exc
        diag += info
        collected = it - schedule.burn_in
        if collected < 0 or (collected + 1) % schedule.thin:
            continue
        mask = state.mask
        if prior_only:
            lj = log_prior(state, kernel.chol, hyper)
        else:
            lj = log_joint(state, data, kernel.chol, hyper)
        trace[row] = (state.gamma0, state.lam, state.nu, mask.sum(), lj)
        if masks.shape[0]:
            masks[row] = mask
        if latent.shape[0]:
            latent[row] = state.gamma
        row += 1
        counts += mask
        if lj > best:
            best, best_mask = lj, mask.copy()
    return counts, trace, best_mask, best, diag, state


def _run_numba(data, kernel, hyper, schedule, seed, config, prior_only, masks, latent):
    from . import _engine

    rng = make_rng(seed)
    lik = CollapsedLikelihood(data)
    init = McmcState.initial(data.p, hyper)
    gamma = init.gamma.copy()
    st = np.array([init.gamma0, init.lam, init.nu])
    h = hyper.as_array()
    counts = np.zeros(data.p, dtype=np.int64)
    trace = np.empty((schedule.n_recorded, len(TRACE_FIELDS)))
    best_mask = np.zeros(data.p, dtype=bool)
    best = np.array([-np.inf])
    diag = np.zeros(3)
    err = np.zeros(2, dtype=np.int64)
    chol = np.ascontiguousarray(kernel.chol)
    phases = ((schedule.burn_in, False, 0), (schedule.collect, True, schedule.burn_in))
    for n_sweeps, record, offset in phases:
        if n_sweeps == 0:
            continue
        _engine.run_sweeps(
            lik.Z, data.y, lik.G, lik.c, lik.yy, chol, h, gamma, st, n_sweeps,
            schedule.thin, record, config.gamma0.initial_width,
            config.log_lambda.initial_width, config.gamma0.max_doublings,
            config.log_lambda.max_doublings, prior_only, rng, trace, counts, best_mask, best, diag,
            err, masks, latent)
        if err[0]:
            snapshot = McmcState(gamma.copy(), st[0], st[1], st[2])
            raise ChainError("Cholesky factorization failed", int(err[1]) + offset, snapshot)
    final = McmcState(gamma, float(st[0]), float(st[1]), float(st[2]))
    return counts.astype(float), trace, best_mask, best[0], diag, final


def _fit_one(args):
    i, data, kernel, hyper, schedule, seed, kwargs = args
    try:
        return run_chain(data, kernel, hyper, schedule, seed, **kwargs)
    except (NumericalError, InvalidArgumentError) as exc:
        return TraitFailure(i, f"{type(exc).__name__}: {exc}")


def fit_trait_batch(traits, kernel, hyper=None, schedule=ChainSchedule(), seeds=None,
                    workers=1, **kwargs):
    """Fit many traits that share one predictor matrix.

    Returns one entry per trait, in input order: a :class:`PosteriorSummary`
    or a :class:`TraitFailure`.  Results depend only on each trait and its
    seed, never on ``workers``.
    """
    traits = list(traits)
    if seeds is None:
        seeds = list(range(len(traits)))
    seeds = list(seeds)
    if len(seeds) != len(traits):
        raise InvalidArgumentError(f"{len(traits)} traits but {len(seeds)} seeds")
    if traits:
        X0 = traits[0].X
        for t in traits[1:]:
            if t.X is not X0 and not np.array_equal(t.X, X0):
                raise InvalidArgumentError("all traits must share the predictor matrix")
    jobs = [(i, t, kernel, hyper, schedule, s, kwargs)
            for i, (t, s) in enumerate(zip(traits, seeds))]
    if workers <= 1 or len(jobs) <= 1:
        return [_fit_one(j) for j in jobs]
    if kwargs.get("backend", "numba") == "numba":
        from . import _engine  # noqa: F401  (compile or load before threads start)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_fit_one, jobs))


def _chain_record(trait_id, s: PosteriorSummary):
    return {
        "record": "chain",
        "trait_id": trait_id,
        "seed": s.seed,
        "schedule": asdict(s.schedule),
        "jitter_applied": s.jitter_applied,
        "y_center": s.y_center,
        "y_scale": s.y_scale,
        "map_log_joint": s.map_log_joint,
        "diagnostics": s.diagnostics,
        "version": __version__,
    }


def write_summaries(path, summaries, trait_ids=None):
    """Write summaries as JSON lines: schema header, then per trait a chain record and p predictor records."""
    if trait_ids is None:
        trait_ids = [str(i) for i in range(len(summaries))]
    with open(path, "w") as fh:
        fh.write(json.dumps({"schema": SUMMARY_SCHEMA, "predictor_fields": PREDICTOR_FIELDS}) + "\n")
        for tid, s in zip(trait_ids, summaries):
            if isinstance(s, TraitFailure):
                fh.write(json.dumps({"record": "failure", "trait_id": tid, "error": s.error}) + "\n")
                continue
            fh.write(json.dumps(_chain_record(tid, s), sort_keys=True) + "\n")
            for j in range(s.p):
                fh.write(json.dumps({"record": "predictor", "trait_id": tid, "predictor_id": j,
                                     "ppi": float(s.ppi[j]),
                                     "map_included": bool(s.map_mask[j])}) + "\n")


def read_summaries(path):
    """Read a summary file into ``{trait_id: {"chain": dict, "ppi": array, "map_included": array}}``."""
    out = {}
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("schema") != SUMMARY_SCHEMA:
            raise InvalidArgumentError(f"{path}: not a posterior summary file")
        rows = {}
        for line in fh:
            rec = json.loads(line)
            tid = rec["trait_id"]
            if rec["record"] == "chain":
                out[tid] = {"chain": rec}
                rows[tid] = []
            elif rec["record"] == "predictor":
                rows[tid].append((rec["predictor_id"], rec["ppi"], rec["map_included"]))
            elif rec["record"] == "failure":
                out[tid] = {"failure": rec["error"]}
    for tid, entries in rows.items():
        entries.sort()
        out[tid]["ppi"] = np.array([e[1] for e in entries])
        out[tid]["map_included"] = np.array([e[2] for e in entries], dtype=bool)
    return out


def write_traces(path, summary: PosteriorSummary):
    with open(path, "w") as fh:
        fh.write("sweep\t" + "\t".join(TRACE_FIELDS) + "\n")
        sched = summary.schedule
        cols = [summary.traces[name] for name in TRACE_FIELDS]
        for r in range(cols[0].size):
            sweep_idx = sched.burn_in + (r + 1) * sched.thin
            vals = [repr(float(c[r])) if name != "included" else str(int(c[r]))
                    for name, c in zip(TRACE_FIELDS, cols)]
            fh.write(f"{sweep_idx}\t" + "\t".join(vals) + "\n")
