"""Named runtime self-checks: executable statements of the library invariants.

Each check builds a small seeded instance, measures the invariant it is named
after, and returns a CheckResult with the measured value in the detail string.
`run_checks` drives them all; the CLI `check` subcommand renders the results
and fails the process if any check fails.

The gradient check compares the analytic reverse-mode gradients against
central finite differences.  Its `inject_fault` hook deliberately corrupts one
analytic gradient entry before the comparison, which must flip the check to
FAIL -- that path proves the checker can actually detect a wrong gradient.
"""

from __future__ import annotations

import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import reference
from .dsa import (
    DsaParams,
    DsaWeights,
    IdwUpsampler,
    deform_vertices,
    dsa_forward,
    random_dsa_weights,
    upsample_attention,
    upsample_idw,
)
from .fsa import FsaWeights, fsa_backward, fsa_forward, random_fsa_weights
from .geom import ball_query, fps, knn
from .pcio import FeatureGraph
from .serialize import load_dsa_weights, load_fsa_weights, save_dsa_weights, save_fsa_weights

# Central differences carry O(h^2) truncation error, and the softmax logits
# path has large third derivatives, so the observed error at h=1e-5 sits near
# 3e-6 (it shrinks quadratically with h until roundoff takes over).  The
# tolerance leaves one order of headroom above measurement noise while still
# catching any real gradient defect, which shows up at 1e-2 or worse.
FD_STEP = 1e-5
GRAD_TOL = 1e-5
REL_FLOOR = 1e-3

_GRAD_TENSORS = ("features", "wq", "wk", "wv", "wo", "wpos", "gamma", "beta")


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str


def _random_graph(rng: np.random.Generator, n: int, d: int, extent: float = 20.0) -> FeatureGraph:
    return FeatureGraph(
        features=rng.standard_normal((n, d)),
        positions=rng.uniform(0.0, extent, size=(n, 3)),
    )


# ---------------------------------------------------------------------------
# gradient checking


def _loss(graph: FeatureGraph, w: FsaWeights, g: np.ndarray) -> float:
    return float((fsa_forward(graph, w).output * g).sum())


def _perturbed(graph: FeatureGraph, w: FsaWeights, name: str, flat_index: int, delta: float):
    if name == "features":
        feats = graph.features.copy()
        feats.flat[flat_index] += delta
        return FeatureGraph(features=feats, positions=graph.positions), w
    arrays = {k: np.asarray(getattr(w, k)).copy() for k in ("wq", "wk", "wv", "wo", "wpos", "gamma", "beta")}
    arrays[name].flat[flat_index] += delta
    return graph, FsaWeights(n_heads=w.n_heads, n_groups=w.n_groups, eps=w.eps, **arrays)


def fd_gradient(graph: FeatureGraph, w: FsaWeights, g: np.ndarray, name: str, h: float = FD_STEP) -> np.ndarray:
    """Central finite-difference gradient of sum(output * g) w.r.t. one tensor."""
    base = graph.features if name == "features" else np.asarray(getattr(w, name))
    out = np.empty(base.size, dtype=np.float64)
    for i in range(base.size):
        gp, wp = _perturbed(graph, w, name, i, +h)
        gm, wm = _perturbed(graph, w, name, i, -h)
        out[i] = (_loss(gp, wp, g) - _loss(gm, wm, g)) / (2.0 * h)
    return out.reshape(base.shape)


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = REL_FLOOR) -> float:
    """Max elementwise |a - b| / max(|a|, |b|, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())


def _well_conditioned_instance(seed: int, n: int = 6, d: int = 8, heads: int = 2):
    """Instance whose group-norm inputs have healthy variance in every group.

    A group with near-zero variance makes the normalization gradient
    ill-conditioned for finite differences, so such draws are resampled.
    """
    for attempt in range(16):
        rng = np.random.default_rng(seed + 1000 * attempt)
        graph = _random_graph(rng, n, d)
        w = random_fsa_weights(d, heads, rng)
        _, tape = fsa_forward(graph, w, want_tape=True)
        grouped = tape.proj.reshape(n, w.n_groups, d // w.n_groups)
        if float(grouped.var(axis=2).min()) >= 1e-3:
            g = rng.standard_normal((n, d))
            return graph, w, g
    raise RuntimeError("could not draw a well-conditioned gradient-check instance")


def check_fsa_gradients(seed: int = 0, inject_fault: bool = False) -> CheckResult:
    """Analytic gradients match central finite differences for every tensor."""
    graph, w, g = _well_conditioned_instance(seed)
    _, tape = fsa_forward(graph, w, want_tape=True)
    grads = fsa_backward(tape, g)
    if inject_fault:
        grads["wq"] = grads["wq"].copy()
        grads["wq"].flat[0] += 1e-2
    worst = 0.0
    worst_name = ""
    for name in _GRAD_TENSORS:
        err = relative_error(grads[name], fd_gradient(graph, w, g, name))
        if err > worst:
            worst, worst_name = err, name
    ok = worst < GRAD_TOL
    detail = (
        f"max relative error {worst:.3e} (worst tensor: {worst_name}, "
        f"tolerance {GRAD_TOL:.0e}, step {FD_STEP:.0e})"
    )
    if inject_fault:
        detail += "; fault injected into the analytic wq gradient"
    return CheckResult("fsa-gradients", ok, detail)


# ---------------------------------------------------------------------------
# other checks


def check_fsa_oracle(seed: int = 0) -> CheckResult:
    """Vectorized attention equals the scalar reference implementation."""
    rng = np.random.default_rng(seed)
    graph = _random_graph(rng, 5, 8)
    w = random_fsa_weights(8, 2, rng)
    got = fsa_forward(graph, w)
    ref_out, ref_attn, ref_ctx = reference.fsa_reference(
        graph.features.tolist(),
        graph.positions.tolist(),
        w.wq.tolist(),
        w.wk.tolist(),
        w.wv.tolist(),
        w.wo.tolist(),
        w.wpos.tolist(),
        w.gamma.tolist(),
        w.beta.tolist(),
        w.n_heads,
        w.n_groups,
        w.eps,
    )
    err = max(
        float(np.abs(got.output - np.asarray(ref_out)).max()),
        float(np.abs(got.attn - np.asarray(ref_attn)).max()),
        float(np.abs(got.context - np.asarray(ref_ctx)).max()),
    )
    return CheckResult(
        "fsa-oracle-agreement", err <= 1e-10, f"max |vectorized - reference| = {err:.3e} (tolerance 1e-10)"
    )


def check_permutation_equivariance(seed: int = 0) -> CheckResult:
    """Permuting the nodes permutes the output rows and attention maps."""
    rng = np.random.default_rng(seed)
    n, d = 30, 16
    graph = _random_graph(rng, n, d)
    w = random_fsa_weights(d, 4, rng)
    perm = rng.permutation(n)
    base = fsa_forward(graph, w)
    permuted = fsa_forward(
        FeatureGraph(features=graph.features[perm], positions=graph.positions[perm]), w
    )
    out_err = float(np.abs(permuted.output - base.output[perm]).max())
    attn_err = float(np.abs(permuted.attn - base.attn[:, perm][:, :, perm]).max())
    err = max(out_err, attn_err)
    return CheckResult(
        "permutation-equivariance",
        err <= 1e-10,
        f"max |permuted - reindexed| = {err:.3e} (tolerance 1e-10)",
    )


def check_attention_rows(seed: int = 0) -> CheckResult:
    """Every attention row is a proper distribution: entries in [0,1], sum 1."""
    rng = np.random.default_rng(seed)
    graph = _random_graph(rng, 50, 16)
    w = random_fsa_weights(16, 4, rng)
    attn = fsa_forward(graph, w).attn
    row_err = float(np.abs(attn.sum(axis=2) - 1.0).max())
    lo = float(attn.min())
    hi = float(attn.max())
    dsa_w = random_dsa_weights(16, 4, rng, upsample="attention")
    _, cross = upsample_attention(rng.standard_normal((12, 16)), graph.features, dsa_w.upsampler)
    row_err = max(row_err, float(np.abs(cross.sum(axis=1) - 1.0).max()))
    lo = min(lo, float(cross.min()))
    hi = max(hi, float(cross.max()))
    ok = row_err <= 1e-12 and lo >= 0.0 and hi <= 1.0 + 1e-12
    return CheckResult(
        "attention-rows-stochastic",
        ok,
        f"max |row sum - 1| = {row_err:.3e}, entries in [{lo:.3e}, {hi:.6f}]",
    )


def check_deformation(seed: int = 0) -> CheckResult:
    """Zero offset weights leave positions untouched; displacements stay in (-1, 1)."""
    rng = np.random.default_rng(seed)
    graph = _random_graph(rng, 60, 8)
    subset = fps(graph.positions, 10)
    nbhd = ball_query(graph.positions[subset.indices], graph.positions, 3.0, 16)

    frozen = deform_vertices(graph, subset, nbhd, np.zeros((8, 3)), rng.standard_normal(3))
    identity_ok = np.array_equal(frozen.positions, graph.positions[subset.indices]) and not frozen.displacements.any()

    # large weights push tanh deep into saturation; the bound must stay strict
    wild = deform_vertices(
        graph, subset, nbhd, 50.0 * rng.standard_normal((8, 3)), np.array([30.0, -40.0, 55.0])
    )
    peak = float(np.abs(wild.displacements).max())
    bound_ok = peak < 1.0 and bool((wild.magnitudes >= 0.0).all())
    refined_ok = np.allclose(wild.positions, graph.positions[subset.indices] + wild.displacements)
    ok = identity_ok and bound_ok and refined_ok
    return CheckResult(
        "deformation-identity-and-bounds",
        ok,
        f"zero-offset identity: {identity_ok}; max |displacement| = {peak:.17f} (< 1 required)",
    )


def check_geometry_oracles(seed: int = 0) -> CheckResult:
    """fps/knn/ball_query agree with the scalar reference implementations."""
    rng = np.random.default_rng(seed)
    base = rng.uniform(0.0, 10.0, size=(40, 3))
    query = rng.uniform(0.0, 10.0, size=(12, 3))
    issues = []

    got_fps = fps(base, 12).indices.tolist()
    want_fps = reference.fps_reference(base.tolist(), 12)
    if got_fps != want_fps:
        issues.append("fps indices diverge from reference")

    got_knn = knn(query, base, 5)
    want_knn = reference.knn_reference(query.tolist(), base.tolist(), 5)
    for i, row in enumerate(want_knn):
        idx = [entry[0] for entry in row]
        dists = [entry[1] for entry in row]
        if got_knn.indices[i].tolist() != idx:
            issues.append(f"knn indices diverge at query {i}")
            break
        if np.abs(got_knn.sq_dists[i] - np.asarray(dists)).max() > 1e-12:
            issues.append(f"knn distances diverge at query {i}")
            break

    got_ball = ball_query(query, base, 2.0, 6)
    want_ball = reference.ball_query_reference(query.tolist(), base.tolist(), 2.0, 6)
    for i, row in enumerate(want_ball):
        k = int(got_ball.counts[i])
        if k != len(row):
            issues.append(f"ball_query counts diverge at query {i}")
            break
        if got_ball.indices[i, :k].tolist() != [entry[0] for entry in row]:
            issues.append(f"ball_query indices diverge at query {i}")
            break

    ok = not issues
    return CheckResult(
        "geometry-matches-reference", ok, "; ".join(issues) if issues else "fps/knn/ball_query all match"
    )


def check_idw_partition_of_unity(seed: int = 0) -> CheckResult:
    """IDW weights sum to 1: constant fields survive, outputs stay in hull bounds."""
    rng = np.random.default_rng(seed)
    d = 8
    subset_pos = rng.uniform(0.0, 10.0, size=(20, 3))
    target_pos = rng.uniform(0.0, 10.0, size=(50, 3))
    ups = IdwUpsampler(radius=3.0, max_samples=8, mlp=np.eye(d))

    constant = np.tile(rng.standard_normal(d), (20, 1))
    out_c = upsample_idw(constant, subset_pos, target_pos, ups)
    const_err = float(np.abs(out_c - constant[0]).max())

    feats = rng.standard_normal((20, d))
    out = upsample_idw(feats, subset_pos, target_pos, ups)
    lo_ok = bool((out >= feats.min(axis=0) - 1e-12).all())
    hi_ok = bool((out <= feats.max(axis=0) + 1e-12).all())
    ok = const_err <= 1e-12 and lo_ok and hi_ok
    return CheckResult(
        "idw-partition-of-unity",
        ok,
        f"constant-field error {const_err:.3e} (tolerance 1e-12); hull bounds hold: {lo_ok and hi_ok}",
    )


def _identity_dsa_instance(seed: int, n: int = 24, d: int = 8):
    """Graph + weights for which deformable attention must equal full attention.

    With zero offsets, identity pooling/interp maps, and radii below the
    minimum pairwise spacing, sampling all n nodes (m = n) leaves nothing
    approximate: every pipeline stage reduces to an exact identity around the
    same attention core.
    """
    rng = np.random.default_rng(seed)
    graph = _random_graph(rng, n, d)
    diffs = graph.positions[:, None, :] - graph.positions[None, :, :]
    sq = (diffs * diffs).sum(axis=2)
    np.fill_diagonal(sq, np.inf)
    tight = 0.5 * float(np.sqrt(sq.min()))
    fsa_w = random_fsa_weights(d, 2, rng)
    w = DsaWeights(
        fsa=fsa_w,
        w_offset=np.zeros((d, 3)),
        w_align=rng.standard_normal(3),
        w_out=np.eye(d),
        upsampler=IdwUpsampler(radius=tight, max_samples=1, mlp=np.eye(d)),
    )
    params = DsaParams(deform_radius=3.0, pool_radius=tight, neighbor_k=1)
    return graph, w, params


def check_dsa_subset_consistency(seed: int = 0) -> CheckResult:
    """Sampling every node (m = n) reproduces full attention exactly."""
    graph, w, params = _identity_dsa_instance(seed)
    full = fsa_forward(graph, w.fsa)
    got, _ = dsa_forward(graph, w, graph.n, params)
    err = float(np.abs(got.output - full.output).max())
    return CheckResult(
        "dsa-subset-consistency", err <= 1e-6, f"max |dsa(m=n) - fsa| = {err:.3e} (tolerance 1e-6)"
    )


def check_serialization_roundtrip(seed: int = 0) -> CheckResult:
    """Weights written to disk and reloaded are bit-identical."""
    rng = np.random.default_rng(seed)
    fsa_w = random_fsa_weights(8, 2, rng)
    dsa_w = random_dsa_weights(16, 4, rng, upsample="attention")
    issues = []
    with tempfile.TemporaryDirectory() as tmp:
        save_fsa_weights(Path(tmp) / "fsa", fsa_w)
        loaded = load_fsa_weights(Path(tmp) / "fsa")
        for name, tensor in fsa_w.tensors().items():
            if not np.array_equal(tensor, loaded.tensors()[name]):
                issues.append(f"fsa tensor {name} not bit-identical")
        if (loaded.n_heads, loaded.n_groups, loaded.eps) != (fsa_w.n_heads, fsa_w.n_groups, fsa_w.eps):
            issues.append("fsa metadata changed")
        save_dsa_weights(Path(tmp) / "dsa", dsa_w)
        reloaded = load_dsa_weights(Path(tmp) / "dsa")
        pairs = [
            ("w_offset", dsa_w.w_offset, reloaded.w_offset),
            ("w_align", dsa_w.w_align, reloaded.w_align),
            ("w_out", dsa_w.w_out, reloaded.w_out),
            ("upsample.wq", dsa_w.upsampler.wq, reloaded.upsampler.wq),
        ]
        for name, a, b in pairs:
            if not np.array_equal(a, b):
                issues.append(f"dsa tensor {name} not bit-identical")
    ok = not issues
    return CheckResult(
        "serialization-roundtrip", ok, "; ".join(issues) if issues else "all tensors bit-identical after reload"
    )


def check_repeat_determinism(seed: int = 0) -> CheckResult:
    """Re-running the same forward pass yields byte-identical arrays."""
    rng = np.random.default_rng(seed)
    graph = _random_graph(rng, 64, 16)
    fsa_w = random_fsa_weights(16, 4, rng)
    dsa_w = random_dsa_weights(16, 4, rng)
    a = fsa_forward(graph, fsa_w)
    b = fsa_forward(graph, fsa_w)
    c, _ = dsa_forward(graph, dsa_w, 32)
    d, _ = dsa_forward(graph, dsa_w, 32)
    ok = (
        a.output.tobytes() == b.output.tobytes()
        and a.attn.tobytes() == b.attn.tobytes()
        and c.output.tobytes() == d.output.tobytes()
    )
    return CheckResult(
        "repeat-determinism",
        ok,
        "fsa and dsa outputs byte-identical across runs" if ok else "outputs differ between runs",
    )


CHECKS = (
    ("fsa-oracle-agreement", check_fsa_oracle),
    ("fsa-gradients", check_fsa_gradients),
    ("permutation-equivariance", check_permutation_equivariance),
    ("attention-rows-stochastic", check_attention_rows),
    ("deformation-identity-and-bounds", check_deformation),
    ("geometry-matches-reference", check_geometry_oracles),
    ("idw-partition-of-unity", check_idw_partition_of_unity),
    ("dsa-subset-consistency", check_dsa_subset_consistency),
    ("serialization-roundtrip", check_serialization_roundtrip),
    ("repeat-determinism", check_repeat_determinism),
)

CHECK_NAMES = tuple(name for name, _fn in CHECKS)


def run_checks(names=None, seed: int = 0, inject_gradient_fault: bool = False) -> list[CheckResult]:
    """Run the named checks (default: all) and collect their results.

    A check that raises is reported as failed rather than aborting the run.
    """
    selected = CHECK_NAMES if names is None else tuple(names)
    unknown = [n for n in selected if n not in CHECK_NAMES]
    if unknown:
        raise ValueError(f"unknown check(s) {unknown}; available: {list(CHECK_NAMES)}")
    table = dict(CHECKS)
    results = []
    for name in selected:
        fn = table[name]
        try:
            if name == "fsa-gradients":
                results.append(fn(seed, inject_fault=inject_gradient_fault))
            else:
                results.append(fn(seed))
        except Exception as exc:  # noqa: BLE001 - report, don't abort the suite
            results.append(CheckResult(name, False, f"raised {type(exc).__name__}: {exc}"))
    return results
