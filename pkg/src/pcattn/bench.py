"""Wall-clock micro-benchmarks comparing full and deformable attention.

Verification code elsewhere in the package runs in float64; benchmarks run in
float32 (loads are cast up front, not per iteration) because throughput is the
point here, not gradient-checkable precision.  Timings use
time.perf_counter with warmup iterations excluded and the median reported.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from .dsa import DsaParams, dsa_forward, random_dsa_weights
from .fsa import fsa_forward, random_fsa_weights
from .pcio import FeatureGraph


@dataclass(frozen=True)
class BenchResult:
    """Median runtimes (seconds) of one FSA-vs-DSA size point."""

    n_nodes: int
    n_keypoints: int
    dim: int
    heads: int
    repeats: int
    fsa_seconds: float
    dsa_seconds: float

    @property
    def speedup(self) -> float:
        return self.fsa_seconds / self.dsa_seconds if self.dsa_seconds > 0 else float("inf")

    def to_dict(self) -> dict:
        return {
            "n_nodes": self.n_nodes,
            "n_keypoints": self.n_keypoints,
            "dim": self.dim,
            "heads": self.heads,
            "repeats": self.repeats,
            "fsa_seconds": self.fsa_seconds,
            "dsa_seconds": self.dsa_seconds,
            "speedup": self.speedup,
        }


def estimate_attention_bytes(n: int, dim: int, heads: int, itemsize: int = 4) -> int:
    """Rough peak working-set bytes for one full-attention forward pass.

    Attention maps are materialized per head ((heads, n, n) total) plus a
    handful of (n, dim) buffers; the per-head logits scratch adds one more
    n*n panel.
    """
    maps = heads * n * n * itemsize
    scratch = n * n * itemsize
    panels = 12 * n * dim * itemsize
    return maps + scratch + panels


def available_memory_bytes() -> int | None:
    """Physical memory reported by the OS, or None if undeterminable."""
    try:
        pages = os.sysconf("SC_PHYS_PAGES")
        page_size = os.sysconf("SC_PAGE_SIZE")
    except (ValueError, OSError, AttributeError):
        return None
    if pages <= 0 or page_size <= 0:
        return None
    return pages * page_size


def check_memory_budget(n: int, dim: int, heads: int) -> tuple[bool, str]:
    """Whether one size point plausibly fits in physical memory."""
    need = estimate_attention_bytes(n, dim, heads)
    have = available_memory_bytes()
    if have is None:
        return True, f"memory check skipped (need ~{need / 1e9:.2f} GB, total memory unknown)"
    # leave headroom for the interpreter and everything else resident
    budget = int(have * 0.6)
    if need > budget:
        return False, (
            f"n={n} needs ~{need / 1e9:.2f} GB for attention maps but only "
            f"~{budget / 1e9:.2f} GB of the {have / 1e9:.2f} GB physical memory is budgeted"
        )
    return True, f"need ~{need / 1e9:.2f} GB of ~{budget / 1e9:.2f} GB budget"


def _median_seconds(fn, repeats: int, warmup: int = 1) -> float:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    samples.sort()
    mid = len(samples) // 2
    if len(samples) % 2:
        return samples[mid]
    return 0.5 * (samples[mid - 1] + samples[mid])


def make_bench_graph(n: int, dim: int, seed: int) -> FeatureGraph:
    """Synthetic float32 node-feature graph for benchmarking."""
    rng = np.random.default_rng(seed)
    positions = rng.uniform(0.0, 50.0, size=(n, 3))
    features = rng.standard_normal((n, dim)).astype(np.float32)
    return FeatureGraph(features=features, positions=positions)


def bench_pair(
    n: int,
    m: int,
    dim: int = 64,
    heads: int = 4,
    repeats: int = 3,
    seed: int = 0,
) -> BenchResult:
    """Median wall-clock seconds of FSA at n nodes vs DSA at m keypoints.

    Both paths run in float32.  DSA runs on the same n-node graph with its
    attention restricted to an m-point subset, matching how the two modules
    would actually be swapped for one another.
    """
    if m > n:
        raise ValueError(f"keypoints m={m} cannot exceed nodes n={n}")
    graph = make_bench_graph(n, dim, seed)
    rng = np.random.default_rng(seed + 1)
    fsa_w = random_fsa_weights(dim, heads, rng).astype(np.float32)
    dsa_w = random_dsa_weights(dim, heads, rng).astype(np.float32)
    params = DsaParams()

    def run_fsa():
        fsa_forward(graph, fsa_w)

    def run_dsa():
        dsa_forward(graph, dsa_w, m, params)

    fsa_seconds = _median_seconds(run_fsa, repeats)
    dsa_seconds = _median_seconds(run_dsa, repeats)
    return BenchResult(
        n_nodes=n,
        n_keypoints=m,
        dim=dim,
        heads=heads,
        repeats=repeats,
        fsa_seconds=fsa_seconds,
        dsa_seconds=dsa_seconds,
    )
