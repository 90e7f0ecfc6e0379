"""Shared instance builders for the test suite."""

from __future__ import annotations

import numpy as np

from pcattn.fsa import FsaWeights, random_fsa_weights
from pcattn.pcio import FeatureGraph


def make_graph(seed: int, n: int, d: int, pos_scale: float = 5.0) -> FeatureGraph:
    rng = np.random.default_rng(seed)
    return FeatureGraph(
        features=rng.standard_normal((n, d)),
        positions=rng.uniform(0.0, pos_scale, size=(n, 3)),
    )


def make_weights(seed: int, d: int, n_heads: int, n_groups: int | None = None) -> FsaWeights:
    rng = np.random.default_rng(seed)
    return random_fsa_weights(d, n_heads, rng, n_groups=n_groups)


def weights_as_dict(w: FsaWeights) -> dict:
    """Plain-array view of FSA weights for the oracle implementations."""
    return {name: np.asarray(t, dtype=np.float64) for name, t in w.tensors().items()}
