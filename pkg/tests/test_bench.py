import numpy as np
import pytest

from pietsp.bench import (
    bench_inference,
    bench_throughput,
    format_table,
    linear_fit_r2,
    measure_axis,
    memory_highwater_bytes,
    synthetic_samples,
)
from pietsp.errors import PietspError
from pietsp.model import init_params


def test_synthetic_samples_invariants():
    samples = synthetic_samples(12, 5, 40, 3, seed=0)
    for s in samples:
        assert s.universe.size == 12
        assert np.unique(s.universe).size == 12
        assert s.membership.shape == (12, 5)
        assert set(np.unique(s.membership)) <= {0.0, 1.0}
        assert np.all(s.membership.sum(axis=1) >= 1)


def test_synthetic_samples_reject_universe_larger_than_vocab():
    with pytest.raises(PietspError):
        synthetic_samples(50, 4, 40, 1, seed=0)


def test_bench_report_arithmetic_identity():
    params = init_params(64, 8, 4, seed=1)
    samples = synthetic_samples(6, 4, 64, 8, seed=2)
    report = bench_inference(samples, params, runs=10, batch_size=8)
    assert report.runs_timed == 7
    assert report.total_samples == 7 * 8
    # samples/sec equals timed samples over total time (well within 1%)
    implied = report.total_samples / report.total_time_s
    assert abs(report.samples_per_sec - implied) / implied < 0.01
    # and the mean is consistent with throughput
    assert abs(report.mean_sample_time_s * report.samples_per_sec - 1.0) < 0.01
    assert report.p99_sample_time_s >= 0.0
    assert report.dtype == "float64"


def test_bench_float32_mode():
    params = init_params(64, 8, 4, seed=1).astype(np.float32)
    samples = synthetic_samples(6, 4, 64, 8, seed=2, dtype=np.float32)
    report = bench_inference(samples, params, runs=6, batch_size=4)
    assert report.dtype == "float32"


def test_bench_rejects_runs_not_exceeding_warmup():
    params = init_params(64, 8, 4, seed=1)
    samples = synthetic_samples(6, 4, 64, 4, seed=2)
    with pytest.raises(PietspError):
        bench_inference(samples, params, runs=3, batch_size=4, warmup=3)


def test_bench_throughput_runs():
    params = init_params(64, 8, 4, seed=1)
    samples = synthetic_samples(6, 4, 64, 8, seed=2)
    rate = bench_throughput(samples, params, workers=2, runs=3, batch_size=8)
    assert rate > 0


def test_linear_fit_r2_exact_line():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    slope, intercept, r2 = linear_fit_r2(x, 3.0 * x + 1.0)
    assert abs(slope - 3.0) < 1e-12
    assert abs(intercept - 1.0) < 1e-12
    assert r2 > 1.0 - 1e-12


def test_linear_fit_r2_needs_three_points():
    with pytest.raises(PietspError):
        linear_fit_r2([1.0, 2.0], [1.0, 2.0])


def test_measure_axis_shapes():
    reports = measure_axis("n", [8, 16], k_max=4, vocab_size=64, dim=8, runs=5, batch_size=4)
    assert [r.n_max for r in reports] == [8, 16]
    table = format_table(reports)
    assert "samples/sec" in table and len(table.splitlines()) == 3


def test_memory_highwater_tracks_vocab():
    small = memory_highwater_bytes(vocab_size=8192, dim=32, k_max=4, n_elements=16)
    large = memory_highwater_bytes(vocab_size=16384, dim=32, k_max=4, n_elements=16)
    assert 1.5 <= large / small <= 2.5
