"""Deformable self-attention: attend over an adaptively deformed subset.

The block runs in five stages over a FeatureGraph with n nodes:

  1. sample m representative nodes by farthest point sampling;
  2. deform each representative's position toward informative structure
     (deform_vertices, driven by feature/position differences to neighbors);
  3. pool features at the refined positions from the full graph
     (aggregate_features, max over a mapped neighborhood);
  4. run full self-attention among the m refined nodes;
  5. distribute the subset block's residual contribution back to all n nodes
     (inverse-distance or cross-attention up-sampling) and add it to each
     node's original feature.

Stage 5 distributes output-minus-input of the subset attention block, so when
the subset equals the full graph and the up-sampling is lossless the block
reproduces plain full self-attention on the same graph.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .fsa import AttentionOutput, FsaWeights, fsa_forward, random_fsa_weights
from .geom import IndexSet, Neighborhood, ball_query, ball_query_with_fallback, fps
from .pcio import FeatureGraph

logger = logging.getLogger(__name__)

_UPSAMPLE_CHUNK = 8192
_IDW_EPS = 1e-8


@dataclass(frozen=True)
class IdwUpsampler:
    """Inverse-distance-weighted up-sampling with a linear refinement map.

    Weights are 1 / (sq_dist + 1e-8), normalized per target over the subset
    points inside `radius` (at most `max_samples`, nearest first); a target
    with no subset point in radius falls back to its single nearest one.
    """

    radius: float
    max_samples: int
    mlp: np.ndarray  # (d, d)

    def __post_init__(self):
        object.__setattr__(self, "mlp", np.asarray(self.mlp))
        if not self.radius > 0:
            raise ValueError(f"radius must be > 0, got {self.radius}")
        if self.max_samples < 1:
            raise ValueError(f"max_samples must be >= 1, got {self.max_samples}")
        if self.mlp.ndim != 2 or self.mlp.shape[0] != self.mlp.shape[1]:
            raise ValueError(f"mlp must be square (d, d), got {self.mlp.shape}")
        if not np.isfinite(self.mlp).all():
            raise ValueError("mlp contains non-finite values")


@dataclass(frozen=True)
class AttentionUpsampler:
    """Single-head cross-attention up-sampling.

    Queries come from the n original node features, keys and values from the
    m subset vectors; each output row is a convex combination of the value
    rows.
    """

    wq: np.ndarray  # (d, d)
    wk: np.ndarray  # (d, d)
    wv: np.ndarray  # (d, d)

    def __post_init__(self):
        shape = np.asarray(self.wq).shape
        for name in ("wq", "wk", "wv"):
            t = np.asarray(getattr(self, name))
            object.__setattr__(self, name, t)
            if t.ndim != 2 or t.shape != shape or t.shape[0] != t.shape[1]:
                raise ValueError(f"{name} must be square and match wq, got {t.shape}")
            if not np.isfinite(t).all():
                raise ValueError(f"{name} contains non-finite values")


@dataclass(frozen=True)
class DsaWeights:
    """Learnable tensors of one deformable attention block.

    w_offset (d, 3) maps feature differences to offset space, w_align (3,)
    maps the scalar deformation magnitude to a per-axis displacement, w_out
    (d, d) is the neighborhood pooling map, fsa holds the subset attention
    block, and upsampler is either an IdwUpsampler or AttentionUpsampler.
    """

    fsa: FsaWeights
    w_offset: np.ndarray
    w_align: np.ndarray
    w_out: np.ndarray
    upsampler: IdwUpsampler | AttentionUpsampler

    def __post_init__(self):
        d = self.fsa.d
        w_offset = np.asarray(self.w_offset)
        w_align = np.asarray(self.w_align).reshape(-1)
        w_out = np.asarray(self.w_out)
        object.__setattr__(self, "w_offset", w_offset)
        object.__setattr__(self, "w_align", w_align)
        object.__setattr__(self, "w_out", w_out)
        if w_offset.shape != (d, 3):
            raise ValueError(f"w_offset must have shape ({d}, 3), got {w_offset.shape}")
        if w_align.shape != (3,):
            raise ValueError(f"w_align must have 3 entries, got shape {w_align.shape}")
        if w_out.shape != (d, d):
            raise ValueError(f"w_out must have shape ({d}, {d}), got {w_out.shape}")
        for name in ("w_offset", "w_align", "w_out"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"{name} contains non-finite values")

    @property
    def d(self) -> int:
        return self.fsa.d

    def astype(self, dtype) -> "DsaWeights":
        """Copy of the weights cast to dtype (used by the benchmark path)."""
        if isinstance(self.upsampler, AttentionUpsampler):
            ups = AttentionUpsampler(
                wq=self.upsampler.wq.astype(dtype),
                wk=self.upsampler.wk.astype(dtype),
                wv=self.upsampler.wv.astype(dtype),
            )
        else:
            ups = IdwUpsampler(
                radius=self.upsampler.radius,
                max_samples=self.upsampler.max_samples,
                mlp=self.upsampler.mlp.astype(dtype),
            )
        return DsaWeights(
            fsa=self.fsa.astype(dtype),
            w_offset=self.w_offset.astype(dtype),
            w_align=self.w_align.astype(dtype),
            w_out=self.w_out.astype(dtype),
            upsampler=ups,
        )


@dataclass(frozen=True)
class DsaParams:
    """Runtime geometry parameters of one deformable attention block."""

    deform_radius: float = 3.0
    pool_radius: float = 2.0
    neighbor_k: int = 16
    fps_start: int = 0

    def __post_init__(self):
        if not self.deform_radius > 0:
            raise ValueError(f"deform_radius must be > 0, got {self.deform_radius}")
        if not self.pool_radius > 0:
            raise ValueError(f"pool_radius must be > 0, got {self.pool_radius}")
        if self.neighbor_k < 1:
            raise ValueError(f"neighbor_k must be >= 1, got {self.neighbor_k}")


@dataclass(frozen=True)
class DeformedSubset:
    """Sampled subset with refined positions and deformation diagnostics.

    refined = original position + displacement; every displacement coordinate
    lies strictly inside (-1, 1) because it passes through tanh.
    """

    indices: IndexSet
    positions: np.ndarray  # (m, 3) refined
    displacements: np.ndarray  # (m, 3)
    magnitudes: np.ndarray  # (m,) scalar deformation magnitudes x*

    def __post_init__(self):
        m = len(self.indices)
        if self.positions.shape != (m, 3):
            raise ValueError(f"positions must have shape ({m}, 3)")
        if self.displacements.shape != (m, 3):
            raise ValueError(f"displacements must have shape ({m}, 3)")
        if self.magnitudes.shape != (m,):
            raise ValueError(f"magnitudes must have shape ({m},)")
        if self.displacements.size and np.abs(self.displacements).max() >= 1.0:
            raise ValueError("displacements must lie strictly inside (-1, 1)")


def random_dsa_weights(
    d: int,
    n_heads: int,
    rng: np.random.Generator,
    scale: float = 0.5,
    n_groups: int | None = None,
    upsample: str = "idw",
    interp_radius: float = 1.6,
    interp_samples: int = 16,
) -> DsaWeights:
    """Seeded Gaussian weights for a deformable block."""
    fsa_w = random_fsa_weights(d, n_heads, rng, scale=scale, n_groups=n_groups)
    if upsample == "idw":
        ups = IdwUpsampler(
            radius=interp_radius,
            max_samples=interp_samples,
            mlp=rng.normal(0.0, scale, size=(d, d)),
        )
    elif upsample == "attention":
        ups = AttentionUpsampler(
            wq=rng.normal(0.0, scale, size=(d, d)),
            wk=rng.normal(0.0, scale, size=(d, d)),
            wv=rng.normal(0.0, scale, size=(d, d)),
        )
    else:
        raise ValueError(f"upsample must be 'idw' or 'attention', got {upsample!r}")
    return DsaWeights(
        fsa=fsa_w,
        w_offset=rng.normal(0.0, scale, size=(d, 3)),
        w_align=rng.normal(0.0, scale, size=3),
        w_out=rng.normal(0.0, scale, size=(d, d)),
        upsampler=ups,
    )


def deform_vertices(
    graph: FeatureGraph,
    subset: IndexSet,
    nbhd: Neighborhood,
    w_offset: np.ndarray,
    w_align: np.ndarray,
) -> DeformedSubset:
    """Shift each sampled node's position by a learned, bounded displacement.

    For sampled node i with neighbors j (indices into the full graph):

        x*_i = relu( sum_j [ (x_i - x_j) @ w_offset ] . (v_i - v_j) ) / k_i
        v'_i = v_i + tanh(w_align * x*_i)           (elementwise, per axis)

    where x are features, v positions, and k_i the neighbor count.  tanh keeps
    every displacement coordinate strictly inside (-1, 1); w_offset of zeros
    reproduces the original positions bit-exactly.  A node with an empty
    neighborhood keeps its position (logged, not an error).
    """
    w_offset = np.asarray(w_offset)
    w_align = np.asarray(w_align).reshape(-1)
    if w_offset.shape != (graph.d, 3):
        raise ValueError(f"w_offset must have shape ({graph.d}, 3), got {w_offset.shape}")
    if w_align.shape != (3,):
        raise ValueError(f"w_align must have 3 entries, got shape {w_align.shape}")
    m = len(subset)
    if len(nbhd) != m:
        raise ValueError(f"neighborhood has {len(nbhd)} rows for {m} sampled nodes")

    feats = graph.features
    pos = graph.positions
    sub = subset.indices
    idx = np.where(nbhd.indices >= 0, nbhd.indices, 0)
    valid = nbhd.valid_mask()

    feat_diff = feats[sub][:, None, :] - feats[idx]  # (m, cap, d)
    proj = feat_diff @ w_offset  # (m, cap, 3)
    pos_diff = pos[sub][:, None, :] - pos[idx]  # (m, cap, 3)
    dots = (proj * pos_diff).sum(axis=2)
    dots[~valid] = 0.0
    counts = nbhd.counts
    empty = counts == 0
    if empty.any():
        logger.info("deform_vertices: %d/%d nodes had empty neighborhoods", int(empty.sum()), m)
    denom = np.maximum(counts, 1)
    magnitudes = np.maximum(dots.sum(axis=1), 0.0) / denom
    displacements = np.tanh(magnitudes[:, None] * w_align[None, :])
    # tanh maps into the open interval (-1, 1) in exact arithmetic, but the
    # float64 result rounds to exactly +/-1.0 for |x| >~ 19.06; clamp to the
    # largest representable value below 1 so the bound stays strict.
    limit = np.nextafter(1.0, 0.0)
    np.clip(displacements, -limit, limit, out=displacements)
    refined = pos[sub] + displacements
    return DeformedSubset(
        indices=subset,
        positions=refined,
        displacements=displacements,
        magnitudes=magnitudes,
    )


def aggregate_features(
    graph: FeatureGraph,
    refined: np.ndarray,
    w_out: np.ndarray,
    radius: float,
    k: int,
) -> np.ndarray:
    """Pool features at refined positions from the full graph.

    Each refined position receives the elementwise max of features[j] @ w_out
    over the (at most k) graph nodes within `radius` of it, nearest first.
    A position with an empty ball falls back to its single nearest node
    (logged).

    Returns:
        (m, d) pooled feature array.
    """
    w_out = np.asarray(w_out)
    if w_out.shape != (graph.d, graph.d):
        raise ValueError(f"w_out must have shape ({graph.d}, {graph.d}), got {w_out.shape}")
    refined = np.asarray(refined, dtype=np.float64)
    nbhd = ball_query_with_fallback(refined, graph.positions, radius, k)
    mapped = graph.features @ w_out

    idx = np.where(nbhd.indices >= 0, nbhd.indices, 0)
    gathered = mapped[idx]
    gathered[~nbhd.valid_mask()] = -np.inf
    pooled = gathered.max(axis=1)

    fallback = nbhd.sq_dists[:, 0] > float(radius) * float(radius)
    if fallback.any():
        logger.info(
            "aggregate_features: %d/%d refined positions had empty balls; using nearest node",
            int(fallback.sum()),
            len(nbhd),
        )
    return pooled


def upsample_idw(
    subset_feats: np.ndarray,
    subset_pos: np.ndarray,
    target_pos: np.ndarray,
    ups: IdwUpsampler,
) -> np.ndarray:
    """Inverse-distance-weighted interpolation from subset to target positions.

    Per target: weights w_j = 1 / (sq_dist_j + 1e-8) over subset points in
    radius (nearest-first, capped), normalized to sum to 1, applied to the
    subset features; the blend is then refined by the linear map ups.mlp.
    A target with an empty ball falls back to its nearest subset point.
    """
    subset_feats = np.asarray(subset_feats)
    d = subset_feats.shape[1]
    if ups.mlp.shape != (d, d):
        raise ValueError(f"ups.mlp must have shape ({d}, {d}), got {ups.mlp.shape}")
    target_pos = np.asarray(target_pos, dtype=np.float64)
    r2 = float(ups.radius) * float(ups.radius)
    n = target_pos.shape[0]
    out = np.empty((n, d), dtype=subset_feats.dtype)
    for s in range(0, n, _UPSAMPLE_CHUNK):
        t = min(s + _UPSAMPLE_CHUNK, n)
        nbhd = ball_query_with_fallback(target_pos[s:t], subset_pos, ups.radius, ups.max_samples)
        idx = np.where(nbhd.indices >= 0, nbhd.indices, 0)
        # padding slots carry inf distances, so they weight to exactly zero
        in_radius = nbhd.sq_dists <= r2
        w = np.where(in_radius, 1.0 / (nbhd.sq_dists + _IDW_EPS), 0.0)
        fallback = ~in_radius[:, 0]
        if fallback.any():
            logger.info(
                "upsample_idw: %d/%d targets had empty balls; using nearest subset point",
                int(fallback.sum()),
                t - s,
            )
            w[fallback, 0] = 1.0
        w = w / w.sum(axis=1, keepdims=True)
        blended = (w[:, :, None] * subset_feats[idx]).sum(axis=1)
        out[s:t] = blended
    return out @ ups.mlp


def upsample_attention(
    subset_feats: np.ndarray,
    target_feats: np.ndarray,
    ups: AttentionUpsampler,
) -> tuple[np.ndarray, np.ndarray]:
    """Single-head cross-attention from target features onto subset vectors.

    Queries are target_feats @ wq, keys/values come from the subset; scores
    are scaled by sqrt(d) and row-softmaxed, so each output row is a convex
    combination of the value rows.

    Returns:
        (output (n, d), attention (n, m)); attention rows sum to 1.
    """
    subset_feats = np.asarray(subset_feats)
    target_feats = np.asarray(target_feats)
    d = subset_feats.shape[1]
    if target_feats.shape[1] != d:
        raise ValueError(
            f"subset and target feature dims disagree: {d} vs {target_feats.shape[1]}"
        )
    if ups.wq.shape != (d, d):
        raise ValueError(f"upsampler weights must have shape ({d}, {d}), got {ups.wq.shape}")
    q = target_feats @ ups.wq
    k = subset_feats @ ups.wk
    v = subset_feats @ ups.wv
    logits = q @ k.T
    logits *= 1.0 / np.sqrt(float(d))
    logits -= logits.max(axis=1, keepdims=True)
    np.exp(logits, out=logits)
    logits /= logits.sum(axis=1, keepdims=True)
    return logits @ v, logits


def dsa_forward(
    graph: FeatureGraph,
    w: DsaWeights,
    m: int,
    params: DsaParams | None = None,
) -> tuple[AttentionOutput, DeformedSubset]:
    """Run one deformable attention block over a graph.

    Args:
        graph: FeatureGraph with n >= m nodes.
        w: block weights.
        m: number of representative nodes to sample.
        params: geometry parameters (radii, neighbor cap, sampling seed).

    Returns:
        (AttentionOutput, DeformedSubset).  output has one row per graph node:
        each node's original feature plus the up-sampled residual contribution
        of the subset attention block; attn holds the (n_heads, m, m) subset
        maps; context is the up-sampled contribution itself, so
        output = features + context.
    """
    if params is None:
        params = DsaParams()
    if graph.d != w.d:
        raise ValueError(f"graph feature dim {graph.d} != weight dim {w.d}")
    if not 1 <= m <= graph.n:
        raise ValueError(f"m must be in [1, {graph.n}], got {m}")

    subset = fps(graph.positions, m, start=params.fps_start)
    nbhd = ball_query(
        graph.positions[subset.indices], graph.positions, params.deform_radius, params.neighbor_k
    )
    deformed = deform_vertices(graph, subset, nbhd, w.w_offset, w.w_align)
    pooled = aggregate_features(
        graph, deformed.positions, w.w_out, params.pool_radius, params.neighbor_k
    )
    sub_graph = FeatureGraph(features=pooled, positions=deformed.positions)
    sub_out = fsa_forward(sub_graph, w.fsa)
    # distribute only what attention added on the subset; each target node
    # then applies it residually to its own original feature
    delta = sub_out.output - pooled
    if isinstance(w.upsampler, IdwUpsampler):
        up = upsample_idw(delta, deformed.positions, graph.positions, w.upsampler)
    else:
        up, _ = upsample_attention(delta, graph.features, w.upsampler)
    output = graph.features + up
    result = AttentionOutput(output=output, attn=sub_out.attn, context=up)
    return result, deformed
