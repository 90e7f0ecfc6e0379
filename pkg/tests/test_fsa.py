"""Tests for the full self-attention block: forward pass, normalization,
equivariance, and the fixed-weight local baseline."""

import numpy as np
import pytest

from pcattn.fsa import (
    FsaWeights,
    encode_positions,
    fsa_forward,
    group_norm,
    local_maxpool_baseline,
    random_fsa_weights,
)
from pcattn.geom import ball_query, knn
from pcattn.pcio import FeatureGraph

from helpers import make_graph, make_weights, weights_as_dict
from oracles import oracle_fsa


def test_forward_matches_scalar_reference():
    # Cross-check the vectorized block against the independent scalar-loop
    # reference on a spread of sizes, head counts, and group counts.
    cases = [
        (0, 1, 2, 1, 1),
        (1, 2, 2, 2, 1),
        (2, 3, 4, 1, 2),
        (3, 5, 4, 2, 4),
        (4, 6, 6, 3, 2),
        (5, 7, 8, 4, 2),
        (6, 8, 8, 2, 8),
        (7, 9, 6, 1, 1),
        (8, 4, 4, 4, 1),
        (9, 11, 8, 8, 4),
    ]
    for seed, n, d, heads, groups in cases:
        g = make_graph(seed, n=n, d=d)
        w = make_weights(seed + 100, d=d, n_heads=heads, n_groups=groups)
        got = fsa_forward(g, w)
        exp_out, exp_attn = oracle_fsa(
            g.features, g.positions, weights_as_dict(w), heads, groups
        )
        assert np.abs(got.output - exp_out).max() < 1e-9
        assert np.abs(got.attn - np.asarray(exp_attn)).max() < 1e-9


def test_forward_frozen_values():
    # [DERIVED] Expected values computed once with the scalar reference
    # implementation for seed 123, n=4, d=4, heads=2, groups=2, then frozen.
    g = make_graph(123, n=4, d=4)
    w = make_weights(123, d=4, n_heads=2, n_groups=2)
    got = fsa_forward(g, w)
    exp_out_0 = np.array(
        [
            -0.5492336376929223,
            -1.0109480556679962,
            1.0446792004503493,
            0.7135981577469368,
        ]
    )
    exp_out_3 = np.array(
        [
            1.6320537569514708,
            -1.3142509956771358,
            0.757009968352979,
            0.6559528261081817,
        ]
    )
    exp_attn_0_1 = np.array(
        [
            0.006489587725201548,
            0.033040700796625314,
            0.047660824308512276,
            0.9128088871696608,
        ]
    )
    exp_attn_1_2 = np.array(
        [
            3.394316522398081e-06,
            0.4680807119643108,
            0.45902204981644784,
            0.07289384390271894,
        ]
    )
    assert np.abs(got.output[0] - exp_out_0).max() < 1e-9
    assert np.abs(got.output[3] - exp_out_3).max() < 1e-9
    assert np.abs(got.attn[0, 1] - exp_attn_0_1).max() < 1e-9
    assert np.abs(got.attn[1, 2] - exp_attn_1_2).max() < 1e-9
    assert abs(float(got.output.sum()) - 1.4101612463880338) < 1e-9


def test_attention_rows_sum_to_one():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(1, 40))
        heads = int(rng.choice([1, 2, 4]))
        d = heads * int(rng.integers(1, 5))
        g = make_graph(int(rng.integers(1 << 30)), n=n, d=d)
        w = make_weights(int(rng.integers(1 << 30)), d=d, n_heads=heads)
        attn = fsa_forward(g, w).attn
        assert attn.shape == (heads, n, n)
        assert (attn >= 0.0).all()
        assert np.abs(attn.sum(axis=2) - 1.0).max() < 1e-12


def test_group_norm_standardizes_each_group():
    rng = np.random.default_rng(11)
    x = rng.normal(0.0, 3.0, size=(9, 12))
    for n_groups in (1, 2, 3, 4, 6, 12):
        out, yhat, inv_sigma = group_norm(
            x, n_groups, np.ones(12), np.zeros(12), eps=1e-5
        )
        grouped = yhat.reshape(9, n_groups, 12 // n_groups)
        assert np.abs(grouped.mean(axis=2)).max() < 1e-12
        # Biased variance of yhat equals var / (var + eps) by construction.
        raw = x.reshape(9, n_groups, 12 // n_groups)
        var = raw.var(axis=2)
        assert np.abs(grouped.var(axis=2) - var / (var + 1e-5)).max() < 1e-12
        assert inv_sigma.shape == (9, n_groups)
        assert (inv_sigma > 0.0).all()
        # gamma=1, beta=0 leaves the normalized values untouched.
        assert np.array_equal(out, yhat * np.ones(12) + np.zeros(12))


def test_group_norm_affine_and_validation():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(5, 6))
    gamma = rng.normal(size=6)
    beta = rng.normal(size=6)
    out, yhat, _ = group_norm(x, 2, gamma, beta)
    assert np.array_equal(out, yhat * gamma + beta)
    with pytest.raises(ValueError, match="must divide"):
        group_norm(x, 4, gamma, beta)
    with pytest.raises(ValueError, match="must divide"):
        group_norm(x, 0, gamma, beta)
    with pytest.raises(ValueError, match="eps"):
        group_norm(x, 2, gamma, beta, eps=0.0)


def test_zero_affine_reduces_to_identity():
    # With gamma = beta = 0 the normalized branch is exactly zero, so the
    # residual returns the input features bit-for-bit.
    g = make_graph(5, n=6, d=4)
    w = make_weights(5, d=4, n_heads=2)
    w = FsaWeights(
        wq=w.wq,
        wk=w.wk,
        wv=w.wv,
        wo=w.wo,
        wpos=w.wpos,
        gamma=np.zeros(4),
        beta=np.zeros(4),
        n_heads=2,
        n_groups=2,
    )
    got = fsa_forward(g, w)
    assert np.array_equal(got.output, g.features)


def test_permutation_equivariance():
    rng = np.random.default_rng(21)
    for _ in range(5):
        n = int(rng.integers(2, 24))
        heads = int(rng.choice([1, 2]))
        d = heads * int(rng.integers(1, 5))
        g = make_graph(int(rng.integers(1 << 30)), n=n, d=d)
        w = make_weights(int(rng.integers(1 << 30)), d=d, n_heads=heads)
        base = fsa_forward(g, w)
        perm = rng.permutation(n)
        gp = FeatureGraph(features=g.features[perm], positions=g.positions[perm])
        got = fsa_forward(gp, w)
        assert np.abs(got.output - base.output[perm]).max() < 1e-9
        for h in range(heads):
            conj = base.attn[h][np.ix_(perm, perm)]
            assert np.abs(got.attn[h] - conj).max() < 1e-9


def test_position_encoding():
    g = make_graph(3, n=5, d=4)
    w = make_weights(3, d=4, n_heads=2)
    assert np.array_equal(
        encode_positions(g, w.wpos), g.features + g.positions @ w.wpos
    )
    with pytest.raises(ValueError, match="wpos"):
        encode_positions(g, np.zeros((4, 4)))


def test_weights_validation():
    ok = dict(
        wq=np.eye(4),
        wk=np.eye(4),
        wv=np.eye(4),
        wo=np.eye(4),
        wpos=np.zeros((3, 4)),
        gamma=np.ones(4),
        beta=np.zeros(4),
        n_heads=2,
        n_groups=2,
    )
    FsaWeights(**ok)  # sanity: the template itself is valid
    with pytest.raises(ValueError, match="wk"):
        FsaWeights(**{**ok, "wk": np.eye(3)})
    with pytest.raises(ValueError, match="wpos"):
        FsaWeights(**{**ok, "wpos": np.zeros((4, 4))})
    with pytest.raises(ValueError, match="gamma"):
        FsaWeights(**{**ok, "gamma": np.ones(5)})
    with pytest.raises(ValueError, match="n_heads"):
        FsaWeights(**{**ok, "n_heads": 3})
    with pytest.raises(ValueError, match="n_heads"):
        FsaWeights(**{**ok, "n_heads": 0})
    with pytest.raises(ValueError, match="n_groups"):
        FsaWeights(**{**ok, "n_groups": 3})
    with pytest.raises(ValueError, match="eps"):
        FsaWeights(**{**ok, "eps": -1.0})
    with pytest.raises(ValueError, match="non-finite"):
        FsaWeights(**{**ok, "wo": np.full((4, 4), np.nan)})


def test_tensors_order_and_astype():
    w = make_weights(9, d=8, n_heads=4)
    assert list(w.tensors()) == ["wq", "wk", "wv", "wo", "wpos", "gamma", "beta"]
    w32 = w.astype(np.float32)
    assert all(t.dtype == np.float32 for t in w32.tensors().values())
    assert w32.n_heads == w.n_heads
    assert w32.n_groups == w.n_groups
    assert w32.eps == w.eps
    for name, t in w.tensors().items():
        assert np.allclose(w32.tensors()[name], t, atol=1e-6)


def test_head_and_dim_properties():
    w = make_weights(1, d=8, n_heads=4, n_groups=2)
    assert w.d == 8
    assert w.head_dim == 2
    rng = np.random.default_rng(2)
    w2 = random_fsa_weights(6, 3, rng)
    assert w2.n_groups == 3  # defaults to the head count


def test_forward_validation_errors():
    g = make_graph(1, n=4, d=4)
    w = make_weights(1, d=8, n_heads=2)
    with pytest.raises(ValueError, match="feature dim"):
        fsa_forward(g, w)
    empty = FeatureGraph(features=np.zeros((0, 4)), positions=np.zeros((0, 3)))
    with pytest.raises(ValueError, match="at least one node"):
        fsa_forward(empty, make_weights(1, d=4, n_heads=2))


def test_forward_output_shapes_and_residual_structure():
    g = make_graph(17, n=7, d=6)
    w = make_weights(17, d=6, n_heads=3, n_groups=2)
    got = fsa_forward(g, w)
    assert got.output.shape == (7, 6)
    assert got.context.shape == (7, 6)
    assert got.attn.shape == (3, 7, 7)
    # output - features equals the normalized projection of the context.
    gn, _, _ = group_norm(got.context @ w.wo, w.n_groups, w.gamma, w.beta, w.eps)
    assert np.array_equal(got.output, g.features + gn)


def test_tape_records_output_and_replays_bit_identically():
    g = make_graph(23, n=9, d=8)
    w = make_weights(23, d=8, n_heads=2, n_groups=4)
    result, tape = fsa_forward(g, w, want_tape=True)
    assert tape.output is result.output
    assert np.array_equal(tape.replay(), result.output)


def test_local_maxpool_matches_loop_reference():
    rng = np.random.default_rng(31)
    g = make_graph(31, n=12, d=5)
    h_map = rng.normal(size=(5, 5))
    nbhd = knn(g.positions, g.positions, 4)
    got = local_maxpool_baseline(g, nbhd, h_map)
    mapped = g.features @ h_map
    expected = np.empty((12, 5))
    for i in range(12):
        cols = nbhd.indices[i, : nbhd.counts[i]]
        expected[i] = mapped[cols].max(axis=0)
    assert np.array_equal(got, expected)


def test_local_maxpool_validation():
    g = make_graph(32, n=6, d=4)
    nbhd = knn(g.positions, g.positions, 2)
    with pytest.raises(ValueError, match="h_map"):
        local_maxpool_baseline(g, nbhd, np.zeros((3, 4)))
    far = g.positions + 1e6
    empty = ball_query(far, g.positions, radius=1e-3, max_samples=2)
    with pytest.raises(ValueError, match="empty neighborhood"):
        local_maxpool_baseline(g, empty, np.zeros((4, 4)))
