"""Tests for the benchmark helpers: memory budgeting and paired timing."""

import numpy as np
import pytest

from pcattn.bench import (
    BenchResult,
    bench_pair,
    check_memory_budget,
    estimate_attention_bytes,
    make_bench_graph,
)


def test_attention_byte_estimate():
    # heads * n^2 maps + one n^2 scratch + a dozen n*dim buffers, 4B items
    n, dim, heads = 100, 8, 2
    expected = heads * n * n * 4 + n * n * 4 + 12 * n * dim * 4
    assert estimate_attention_bytes(n, dim, heads) == expected
    assert estimate_attention_bytes(n, dim, heads, itemsize=8) == 2 * expected


def test_memory_budget_refuses_absurd_sizes():
    ok, detail = check_memory_budget(64, 8, 2)
    assert ok
    ok, detail = check_memory_budget(10_000_000, 64, 4)
    assert not ok
    assert "GB" in detail


def test_make_bench_graph_is_seeded_float32():
    g1 = make_bench_graph(50, 8, seed=3)
    g2 = make_bench_graph(50, 8, seed=3)
    g3 = make_bench_graph(50, 8, seed=4)
    assert g1.features.dtype == np.float32
    assert np.array_equal(g1.features, g2.features)
    assert np.array_equal(g1.positions, g2.positions)
    assert not np.array_equal(g1.features, g3.features)


def test_bench_pair_reports_positive_timings():
    result = bench_pair(48, 12, dim=8, heads=2, repeats=1, seed=0)
    assert isinstance(result, BenchResult)
    assert result.n_nodes == 48
    assert result.n_keypoints == 12
    assert result.fsa_seconds > 0.0
    assert result.dsa_seconds > 0.0
    assert result.speedup == pytest.approx(result.fsa_seconds / result.dsa_seconds)
    payload = result.to_dict()
    assert payload["n_nodes"] == 48
    assert payload["speedup"] == pytest.approx(result.speedup)


def test_bench_pair_rejects_oversized_subsets():
    with pytest.raises(ValueError, match="m"):
        bench_pair(16, 32, dim=8, heads=2, repeats=1)
