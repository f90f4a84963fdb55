import os

import numpy as np
import pytest

from oracles import chain_mask_frequencies, enumerate_mask_posterior, total_variation
from structsparse import ChainSchedule, Dataset, Hyperparams, fit_trait_batch, run_chain
from structsparse.errors import ChainError, InvalidArgumentError, NumericalError
from structsparse.inference import (TRACE_FIELDS, TraitFailure, read_summaries, write_summaries,
                                    write_traces)
from structsparse.kernels import correlation_kernel, identity_kernel
from structsparse.model import CollapsedLikelihood


def _instance(n=30, p=8, seed=0, signal=(1,)):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = X[:, list(signal)].sum(axis=1) * 1.5 + rng.normal(size=n)
    return Dataset(X, y)


def test_backends_produce_the_same_chain():
    data = _instance()
    kern = correlation_kernel(data.X)
    kw = dict(schedule=ChainSchedule(30, 120, thin=2), seed=11, keep_masks=True, keep_latent=True)
    a = run_chain(data, kern, backend="numba", **kw)
    b = run_chain(data, kern, backend="python", **kw)
    assert np.array_equal(a.masks, b.masks)
    assert np.array_equal(a.ppi, b.ppi)
    for name in TRACE_FIELDS:
        np.testing.assert_allclose(a.traces[name], b.traces[name], rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(a.latent, b.latent, rtol=1e-9, atol=1e-12)
    assert a.diagnostics == b.diagnostics


def test_prior_only_backends_agree():
    data = _instance(p=4)
    kw = dict(schedule=ChainSchedule(0, 200), seed=3, prior_only=True)
    a = run_chain(data, identity_kernel(4), backend="numba", **kw)
    b = run_chain(data, identity_kernel(4), backend="python", **kw)
    np.testing.assert_allclose(a.traces["log_joint"], b.traces["log_joint"], rtol=1e-12)


def test_two_predictor_chain_matches_enumeration():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(8, 2))
    data = Dataset(X, 1.2 * X[:, 0] + rng.normal(size=8))
    kern = correlation_kernel(X)
    hyper = Hyperparams.default(2)
    s = run_chain(data, kern, hyper, ChainSchedule(1000, 100_000), seed=5, keep_masks=True)
    std = data.standardized()[0]
    post, _ = enumerate_mask_posterior(std.X, std.y, kern.sigma, hyper)
    assert total_variation(chain_mask_frequencies(s.masks), post) < 0.03
    exact_ppi = np.array([post[1] + post[3], post[2] + post[3]])
    assert np.abs(s.ppi - exact_ppi).max() < 0.05


def test_null_data_ppi_stays_near_prior():
    rng = np.random.default_rng(6)
    data = Dataset(rng.normal(size=(100, 20)), rng.normal(size=100))
    s = run_chain(data, correlation_kernel(data.X), schedule=ChainSchedule(500, 3000), seed=1, k0=2)
    assert s.ppi.mean() <= 2 / 20 + 0.05


def test_signal_is_found():
    data = _instance(n=60, p=10, signal=(2, 7))
    s = run_chain(data, identity_kernel(10), schedule=ChainSchedule(300, 1500), seed=2)
    assert s.ppi[2] > 0.9 and s.ppi[7] > 0.9
    assert s.map_mask[2] and s.map_mask[7]


def test_same_seed_gives_identical_files(tmp_path):
    data = _instance()
    kern = correlation_kernel(data.X)
    paths = []
    for k in range(2):
        s = run_chain(data, kern, schedule=ChainSchedule(20, 50), seed=9)
        paths.append(tmp_path / f"s{k}.jsonl")
        write_summaries(paths[-1], [s])
        write_traces(tmp_path / f"t{k}.tsv", s)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert (tmp_path / "t0.tsv").read_bytes() == (tmp_path / "t1.tsv").read_bytes()


def test_different_seeds_differ():
    data = _instance()
    kern = identity_kernel(data.p)
    a = run_chain(data, kern, schedule=ChainSchedule(0, 50), seed=1)
    b = run_chain(data, kern, schedule=ChainSchedule(0, 50), seed=2)
    assert not np.array_equal(a.traces["lam"], b.traces["lam"])


def test_thinning_records_every_kth_sweep():
    data = _instance(p=4)
    full = run_chain(data, identity_kernel(4), schedule=ChainSchedule(10, 60), seed=4)
    thin = run_chain(data, identity_kernel(4), schedule=ChainSchedule(10, 60, thin=3), seed=4)
    np.testing.assert_array_equal(thin.traces["lam"], full.traces["lam"][2::3])


def test_batch_of_one_equals_run_chain():
    data = _instance()
    kern = correlation_kernel(data.X)
    sched = ChainSchedule(20, 40)
    single = run_chain(data, kern, schedule=sched, seed=13)
    [batch] = fit_trait_batch([data], kern, schedule=sched, seeds=[13])
    assert np.array_equal(single.ppi, batch.ppi)
    assert np.array_equal(single.traces["log_joint"], batch.traces["log_joint"])


def test_worker_count_does_not_change_results(tmp_path):
    rng = np.random.default_rng(7)
    X = rng.normal(size=(25, 6))
    traits = [Dataset(X, X[:, t % 6] + rng.normal(size=25)) for t in range(10)]
    kern = correlation_kernel(X)
    sched = ChainSchedule(20, 60)
    out = []
    for workers in (1, 8):
        res = fit_trait_batch(traits, kern, schedule=sched, seeds=range(100, 110), workers=workers)
        path = tmp_path / f"w{workers}.jsonl"
        write_summaries(path, res)
        out.append(path.read_bytes())
    assert out[0] == out[1]


@pytest.mark.skipif((os.cpu_count() or 1) < 2, reason="throughput scaling needs several CPUs")
def test_batch_throughput_scales_with_workers():
    import time

    rng = np.random.default_rng(8)
    X = rng.normal(size=(100, 50))
    traits = [Dataset(X, rng.normal(size=100)) for _ in range(50)]
    kern = correlation_kernel(X)
    sched = ChainSchedule(100, 400)
    fit_trait_batch(traits[:1], kern, schedule=sched)  # warm the compiled engine
    times = {}
    for workers in (1, min(4, os.cpu_count())):
        t0 = time.perf_counter()
        fit_trait_batch(traits, kern, schedule=sched, workers=workers)
        times[workers] = time.perf_counter() - t0
    w = max(times)
    assert times[w] < times[1]


def test_batch_reports_failures_in_place():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(10, 3))
    traits = [Dataset(X, rng.normal(size=10)), Dataset(X, np.ones(10))]
    res = fit_trait_batch(traits, identity_kernel(3), schedule=ChainSchedule(5, 10))
    assert not isinstance(res[0], TraitFailure)
    assert isinstance(res[1], TraitFailure) and res[1].index == 1
    assert "constant" in res[1].error


def test_batch_requires_shared_predictors():
    a = Dataset(np.eye(3), np.arange(3.0))
    b = Dataset(np.eye(3) * 2, np.arange(3.0))
    with pytest.raises(InvalidArgumentError):
        fit_trait_batch([a, b], identity_kernel(3))


def test_kernel_dimension_must_match():
    with pytest.raises(InvalidArgumentError):
        run_chain(_instance(p=4), identity_kernel(5))


def test_schedule_validation():
    with pytest.raises(InvalidArgumentError):
        ChainSchedule(collect=0)
    with pytest.raises(InvalidArgumentError):
        ChainSchedule(collect=10, thin=11)
    with pytest.raises(InvalidArgumentError):
        ChainSchedule(burn_in=-1)
    with pytest.raises(InvalidArgumentError):
        run_chain(_instance(p=2), identity_kernel(2), backend="gpu")


def test_factorization_failure_surfaces_as_chain_error(monkeypatch):
    calls = {"n": 0}
    real_terms = CollapsedLikelihood.terms

    def flaky(self, mask, lam, path="auto"):
        calls["n"] += 1
        if calls["n"] > 40:
            raise NumericalError("forced failure", jitters=[0.0])
        return real_terms(self, mask, lam, path)

    monkeypatch.setattr(CollapsedLikelihood, "terms", flaky)
    with pytest.raises(ChainError) as info:
        run_chain(_instance(p=3), identity_kernel(3), schedule=ChainSchedule(0, 100),
                  backend="python")
    assert 0 <= info.value.iteration < 100
    assert info.value.state is not None


def test_summary_roundtrip(tmp_path):
    data = _instance(p=5)
    s = run_chain(data, identity_kernel(5), schedule=ChainSchedule(10, 30), seed=3)
    fail = TraitFailure(1, "NumericalError: boom")
    write_summaries(tmp_path / "s.jsonl", [s, fail], ["a", "b"])
    back = read_summaries(tmp_path / "s.jsonl")
    np.testing.assert_array_equal(back["a"]["ppi"], s.ppi)
    np.testing.assert_array_equal(back["a"]["map_included"], s.map_mask)
    assert back["a"]["chain"]["seed"] == 3
    assert back["b"] == {"failure": "NumericalError: boom"}


def test_trace_file_layout(tmp_path):
    s = run_chain(_instance(p=3), identity_kernel(3), schedule=ChainSchedule(5, 12, thin=4), seed=1)
    write_traces(tmp_path / "t.tsv", s)
    lines = (tmp_path / "t.tsv").read_text().splitlines()
    assert lines[0].split("\t") == ["sweep", *TRACE_FIELDS]
    assert [int(l.split("\t")[0]) for l in lines[1:]] == [9, 13, 17]
