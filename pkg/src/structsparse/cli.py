"""``structsparse`` command line: simulate, fit, fsr and eval.

Every command writes a ``manifest.json`` (command, flags, seed, input
digests and version) and is a pure function of its inputs, flags and seed,
so rerunning a manifest reproduces the outputs byte for byte.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import glob
import json
import math
import os
import sys

import click
import numpy as np

from . import __version__
from .baselines import forward_stepwise_bic, write_fsr_records
from .errors import InvalidArgumentError, NotFoundError, NumericalError
from .evaluation import (ScoredPredictors, average_precision, empirical_fdr, pr_curve,
                         threshold_for_fdr, write_fdr_table, write_pr_table)
from .inference import ChainSchedule, TraitFailure, fit_trait_batch, write_summaries, write_traces
from .io import file_digest, read_matrix, read_scores, read_truth, write_matrix, write_truth
from .kernels import (block_kernel, contiguous_groups, correlation_kernel, covariance_kernel,
                      identity_kernel)
from .model import Dataset
from .samplers import derived_seed, make_rng
from .simgen import GenotypeSpec, sim1, simtag, simulate_genotypes

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4
MANIFEST = "manifest.json"


class DataError(click.ClickException):
    exit_code = EXIT_DATA


class NumericalFailure(click.ClickException):
    exit_code = EXIT_NUMERICAL


def _write_manifest(path, command, flags, inputs=()):
    manifest = {
        "command": command,
        "flags": flags,
        "seed": flags.get("seed"),
        "inputs": {os.path.basename(p): file_digest(p) for p in inputs},
        "version": __version__,
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _expand(pattern, what):
    paths = sorted(glob.glob(pattern))
    if not paths:
        raise DataError(f"no {what} files match {pattern!r}")
    return paths


def _guard(fn):
    """Translate library errors into the documented exit codes."""
    def wrapped(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NumericalError as exc:
            raise NumericalFailure(str(exc)) from exc
        except (InvalidArgumentError, NotFoundError) as exc:
            raise DataError(str(exc)) from exc
    wrapped.__name__ = fn.__name__
    wrapped.__doc__ = fn.__doc__
    return wrapped


@click.group()
@click.version_option(__version__)
def main():
    """Structured sparse regression with a Gaussian-field spike-and-slab prior."""


@main.command()
@click.option("--mode", type=click.Choice(["sim1", "simtag"]), required=True)
@click.option("--n", "n", type=click.IntRange(min=3), default=300, show_default=True)
@click.option("--p", "p", type=click.IntRange(min=1), default=200, show_default=True)
@click.option("--blocks", type=click.IntRange(min=1), default=None,
              help="Number of correlated blocks (overrides --block-size).")
@click.option("--block-size", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--rho", type=click.FloatRange(0, 1, max_open=True), default=0.9, show_default=True)
@click.option("--q-min", type=click.IntRange(min=1), default=2, show_default=True)
@click.option("--q-max", type=click.IntRange(min=1), default=6, show_default=True)
@click.option("--s-min", type=click.IntRange(min=1), default=2, show_default=True)
@click.option("--s-max", type=click.IntRange(min=1), default=8, show_default=True)
@click.option("--remove", type=click.IntRange(min=0), default=1, show_default=True)
@click.option("--reps", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@_guard
def simulate(mode, n, p, blocks, block_size, rho, q_min, q_max, s_min, s_max, remove, reps,
             seed, out):
    """Simulate genotype matrices and traits with known causal predictors.

    Replicate ``i`` gets its own genotype matrix and trait, driven by a seed
    derived from ``--seed`` and ``i``.  Files: ``repNNN.X.txt``,
    ``repNNN.y.txt``, ``repNNN.truth.json``.
    """
    lo, hi = (q_min, q_max) if mode == "sim1" else (s_min, s_max)
    if lo > hi:
        raise click.UsageError(f"empty causal-count range [{lo}, {hi}]")
    if hi > p:
        raise click.UsageError(f"cannot place up to {hi} causal predictors among p={p}")
    if mode == "simtag" and remove >= hi:
        raise click.UsageError(
            f"--remove {remove} with --s-max {hi} leaves no observed causal predictor")
    if blocks is not None:
        block_size = math.ceil(p / blocks)
    spec = GenotypeSpec(n, p, block_size, rho)
    os.makedirs(out, exist_ok=True)
    for i in range(reps):
        rng = make_rng(derived_seed(seed, i))
        X = simulate_genotypes(spec, rng)
        if mode == "sim1":
            y, truth = sim1(X, (lo, hi), rng)
        else:
            y, X, truth = simtag(X, (lo, hi), remove, rng)
        stem = os.path.join(out, f"rep{i:03d}")
        write_matrix(stem + ".X.txt", X)
        write_matrix(stem + ".y.txt", y)
        write_truth(stem + ".truth.json", truth)
    flags = dict(mode=mode, n=n, p=p, blocks=blocks, block_size=block_size, rho=rho,
                 q_min=q_min, q_max=q_max, s_min=s_min, s_max=s_max, remove=remove,
                 reps=reps, seed=seed)
    _write_manifest(os.path.join(out, MANIFEST), "simulate", flags)


def _load_traits(x_path, y_path):
    X = read_matrix(x_path)
    Y = read_matrix(y_path)
    if Y.shape[0] != X.shape[0]:
        raise DataError(f"{x_path} has {X.shape[0]} rows but {y_path} has {Y.shape[0]}")
    return X.astype(float), Y.astype(float)


def _build_kernel(kind, X, block_size, rho):
    if kind == "correlation":
        return correlation_kernel(X)
    if kind == "covariance":
        return covariance_kernel(X)
    if kind == "identity":
        return identity_kernel(X.shape[1])
    return block_kernel(contiguous_groups(X.shape[1], block_size), rho)


def _permuted(y, seed, index):
    # a dedicated stream, independent of the chain seeds
    return make_rng(derived_seed(derived_seed(seed, index), 1)).permutation(y)


@main.command()
@click.option("--x", "x_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--y", "y_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Response matrix; each column is one trait.")
@click.option("--kernel", type=click.Choice(["correlation", "covariance", "identity", "block"]),
              default="correlation", show_default=True)
@click.option("--kernel-x", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Build the correlation/covariance kernel from this matrix instead of --x.")
@click.option("--block-size", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--rho", type=click.FloatRange(0, 1, max_open=True), default=0.9, show_default=True)
@click.option("--burn", type=click.IntRange(min=0), default=500, show_default=True)
@click.option("--collect", type=click.IntRange(min=1), default=1000, show_default=True)
@click.option("--thin", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--k0", type=float, default=None,
              help="Prior expected number of included predictors (default min(5, p/2)).")
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--permute-y", is_flag=True, help="Fit a random permutation of each trait.")
@click.option("--backend", type=click.Choice(["numba", "python"]), default="numba",
              show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@_guard
def fit(x_path, y_path, kernel, kernel_x, block_size, rho, burn, collect, thin, k0, seed,
        workers, permute_y, backend, out):
    """Run one MCMC chain per trait and write posterior summaries and traces."""
    if thin > collect:
        raise click.UsageError(f"--thin {thin} exceeds --collect {collect}")
    X, Y = _load_traits(x_path, y_path)
    if k0 is not None and not 0 < k0 < X.shape[1]:
        raise click.UsageError(f"--k0 must lie in (0, p={X.shape[1]})")
    KX = X if kernel_x is None else read_matrix(kernel_x).astype(float)
    if KX.shape[1] != X.shape[1]:
        raise DataError(f"kernel matrix has {KX.shape[1]} columns but X has {X.shape[1]}")
    K = _build_kernel(kernel, KX, block_size, rho)
    ys = [Y[:, t] for t in range(Y.shape[1])]
    if permute_y:
        ys = [_permuted(y, seed, t) for t, y in enumerate(ys)]
    traits, ids, failed = [], [str(t) for t in range(len(ys))], {}
    for t, y in enumerate(ys):
        try:
            traits.append(Dataset(X, y))
        except InvalidArgumentError as exc:
            raise DataError(f"trait {t}: {exc}") from exc
    seeds = [derived_seed(seed, t) for t in range(len(traits))]
    results = fit_trait_batch(traits, K, schedule=ChainSchedule(burn, collect, thin), seeds=seeds,
                              workers=workers, k0=k0, backend=backend)
    os.makedirs(os.path.join(out, "traces"), exist_ok=True)
    write_summaries(os.path.join(out, "summary.jsonl"), results, ids)
    for tid, res in zip(ids, results):
        if isinstance(res, TraitFailure):
            failed[tid] = res.error
        else:
            write_traces(os.path.join(out, "traces", f"trait{tid}.tsv"), res)
    flags = dict(x=os.path.basename(x_path), y=os.path.basename(y_path), kernel=kernel,
                 kernel_x=None if kernel_x is None else os.path.basename(kernel_x),
                 block_size=block_size, rho=rho, burn=burn, collect=collect, thin=thin, k0=k0,
                 seed=seed, workers=workers, permute_y=permute_y, backend=backend)
    inputs = [x_path, y_path] + ([kernel_x] if kernel_x else [])
    _write_manifest(os.path.join(out, MANIFEST), "fit", flags, inputs)
    if failed:
        for tid, msg in failed.items():
            click.echo(f"trait {tid} failed: {msg}", err=True)
        sys.exit(EXIT_NUMERICAL)


@main.command()
@click.option("--x", "x_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--y", "y_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--permute-y", is_flag=True)
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True,
              help="Only used with --permute-y.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
@_guard
def fsr(x_path, y_path, permute_y, seed, out):
    """Forward stepwise regression with BIC stopping; writes ``fsr.tsv``."""
    X, Y = _load_traits(x_path, y_path)
    ys = [Y[:, t] for t in range(Y.shape[1])]
    if permute_y:
        ys = [_permuted(y, seed, t) for t, y in enumerate(ys)]
    results = [forward_stepwise_bic(Dataset(X, y)) for y in ys]
    os.makedirs(out, exist_ok=True)
    write_fsr_records(os.path.join(out, "fsr.tsv"), results,
                      [str(t) for t in range(len(ys))], X.shape[1])
    flags = dict(x=os.path.basename(x_path), y=os.path.basename(y_path),
                 permute_y=permute_y, seed=seed)
    _write_manifest(os.path.join(out, MANIFEST), "fsr", flags, [x_path, y_path])


@main.group("eval")
def eval_group():
    """Precision-recall and permutation-FDR tables."""


def _eval_manifest(out, command, flags, inputs):
    # eval writes single files, so its manifest sits next to the table
    _write_manifest(out + ".manifest.json", command, flags, inputs)


@eval_group.command("pr")
@click.option("--scores", required=True, help="Glob of score files (summary.jsonl or fsr.tsv).")
@click.option("--truth", required=True, help="Glob of truth files, paired with --scores in sorted order.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_guard
def eval_pr(scores, truth, out):
    """Pool replicates into one PR table and print the average precision."""
    score_paths = _expand(scores, "score")
    truth_paths = _expand(truth, "truth")
    if len(score_paths) != len(truth_paths):
        raise DataError(f"{len(score_paths)} score files but {len(truth_paths)} truth files")
    scored = []
    for sp, tp in zip(score_paths, truth_paths):
        traits = read_scores(sp)
        if len(traits) != 1:
            raise DataError(f"{sp}: expected one trait per replicate, found {len(traits)}")
        s = traits[0][1]
        scored.append(ScoredPredictors(s, read_truth(tp).indicator(s.size)))
    curve = pr_curve(scored)
    write_pr_table(out, curve)
    _eval_manifest(out, "eval pr", dict(scores=scores, truth=truth), score_paths + truth_paths)
    click.echo(f"average_precision\t{average_precision(curve)!r}")


def _pooled(paths):
    return np.concatenate([s for p in paths for _, s in read_scores(p)])


@eval_group.command("fdr")
@click.option("--real", required=True, help="Score file (or glob) from the real responses.")
@click.option("--perm", required=True, help="Score file (or glob) from permuted responses.")
@click.option("--target", type=click.FloatRange(0, 1), default=0.05, show_default=True)
@click.option("--n-perm", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_guard
def eval_fdr(real, perm, target, n_perm, out):
    """Empirical FDR table and the smallest threshold meeting ``--target``.

    The table goes to ``--out``; the chosen threshold with its hit counts
    goes to ``<out>.threshold.json`` and stdout.
    """
    real_paths, perm_paths = _expand(real, "real score"), _expand(perm, "permuted score")
    curve = empirical_fdr(_pooled(real_paths), _pooled(perm_paths), n_perm=n_perm)
    write_fdr_table(out, curve)
    _eval_manifest(out, "eval fdr", dict(real=real, perm=perm, target=target, n_perm=n_perm),
                   real_paths + perm_paths)
    try:
        c = threshold_for_fdr(curve, target)
    except NotFoundError:
        with open(out + ".threshold.json", "w") as fh:
            json.dump({"target": target, "threshold": None}, fh, sort_keys=True)
            fh.write("\n")
        raise
    i = int(np.flatnonzero(curve.thresholds == c)[0])
    result = {"target": target, "threshold": c, "real_hits": float(curve.real_counts[i]),
              "perm_hits": float(curve.perm_counts[i]), "fdr": float(curve.fdr[i])}
    with open(out + ".threshold.json", "w") as fh:
        json.dump(result, fh, sort_keys=True)
        fh.write("\n")
    click.echo(f"threshold\t{c!r}")


if __name__ == "__main__":
    main()
