"""Full self-attention context aggregation over feature graphs.

One block computes, for node features X (n, d) and positions P (n, 3):

    X' = X + P @ wpos                        (absolute position encoding)
    per head h:  Q = X' @ wq[:, h], K = X' @ wk[:, h], V = X' @ wv[:, h]
                 A_h = row_softmax(Q K^T / sqrt(head_dim))
                 C_h = A_h @ V
    context = concat_h C_h                   (n, d)
    output  = X + group_norm(context @ wo)

All linear maps act on row vectors (x @ W with W of shape (in, out)).  The
module also provides exact reverse-mode gradients for the whole block via a
recorded GradTape, and a fixed-weight local max-pool baseline for contrast
experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geom import Neighborhood
from .pcio import FeatureGraph


@dataclass(frozen=True)
class FsaWeights:
    """Learnable tensors of one attention block.

    Shapes: wq/wk/wv/wo (d, d), wpos (3, d), gamma/beta (d,).  The head count
    and group count must both divide d.  Parameter shapes depend only on d,
    never on the number of nodes the block is applied to.
    """

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    wpos: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    n_heads: int
    n_groups: int
    eps: float = 1e-5

    def __post_init__(self):
        d = self.wq.shape[0] if self.wq.ndim == 2 else -1
        for name in ("wq", "wk", "wv", "wo"):
            t = np.asarray(getattr(self, name))
            object.__setattr__(self, name, t)
            if t.shape != (d, d):
                raise ValueError(f"{name} must have shape ({d}, {d}), got {t.shape}")
        wpos = np.asarray(self.wpos)
        object.__setattr__(self, "wpos", wpos)
        if wpos.shape != (3, d):
            raise ValueError(f"wpos must have shape (3, {d}), got {wpos.shape}")
        for name in ("gamma", "beta"):
            t = np.asarray(getattr(self, name))
            object.__setattr__(self, name, t)
            if t.shape != (d,):
                raise ValueError(f"{name} must have shape ({d},), got {t.shape}")
        if self.n_heads < 1 or d % self.n_heads != 0:
            raise ValueError(f"n_heads={self.n_heads} must divide d={d}")
        if self.n_groups < 1 or d % self.n_groups != 0:
            raise ValueError(f"n_groups={self.n_groups} must divide d={d}")
        if not self.eps > 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        for name in ("wq", "wk", "wv", "wo", "wpos", "gamma", "beta"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"{name} contains non-finite values")

    @property
    def d(self) -> int:
        return int(self.wq.shape[0])

    @property
    def head_dim(self) -> int:
        return self.d // self.n_heads

    def tensors(self) -> dict[str, np.ndarray]:
        """Named tensor view, in a fixed order, for serialization."""
        return {
            "wq": self.wq,
            "wk": self.wk,
            "wv": self.wv,
            "wo": self.wo,
            "wpos": self.wpos,
            "gamma": self.gamma,
            "beta": self.beta,
        }

    def astype(self, dtype) -> "FsaWeights":
        """Copy of the weights cast to dtype (used by the benchmark path)."""
        return FsaWeights(
            wq=self.wq.astype(dtype),
            wk=self.wk.astype(dtype),
            wv=self.wv.astype(dtype),
            wo=self.wo.astype(dtype),
            wpos=self.wpos.astype(dtype),
            gamma=self.gamma.astype(dtype),
            beta=self.beta.astype(dtype),
            n_heads=self.n_heads,
            n_groups=self.n_groups,
            eps=self.eps,
        )


def random_fsa_weights(
    d: int,
    n_heads: int,
    rng: np.random.Generator,
    scale: float = 0.5,
    n_groups: int | None = None,
    eps: float = 1e-5,
) -> FsaWeights:
    """Seeded Gaussian weights; group count defaults to the head count."""
    if n_groups is None:
        n_groups = n_heads
    return FsaWeights(
        wq=rng.normal(0.0, scale, size=(d, d)),
        wk=rng.normal(0.0, scale, size=(d, d)),
        wv=rng.normal(0.0, scale, size=(d, d)),
        wo=rng.normal(0.0, scale, size=(d, d)),
        wpos=rng.normal(0.0, scale, size=(3, d)),
        gamma=rng.normal(1.0, scale, size=d),
        beta=rng.normal(0.0, scale, size=d),
        n_heads=n_heads,
        n_groups=n_groups,
        eps=eps,
    )


@dataclass(frozen=True)
class AttentionOutput:
    """Result of one attention block.

    output: (n, d) node features after the residual add.
    attn: (n_heads, n_q, n_k) row-stochastic attention maps.
    context: (n, d) accumulated context vectors before the output projection
        and residual.
    """

    output: np.ndarray
    attn: np.ndarray
    context: np.ndarray


@dataclass
class GradTape:
    """Recorded intermediates of one fsa_forward call.

    Holds everything fsa_backward needs; replay() recomputes the forward pass
    from the recorded inputs and reproduces the recorded output bit-for-bit
    (the forward pass is deterministic).
    """

    graph: FeatureGraph
    weights: FsaWeights
    xp: np.ndarray  # position-encoded features (n, d)
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    attn: np.ndarray  # (n_heads, n, n)
    context: np.ndarray  # (n, d)
    proj: np.ndarray  # context @ wo, input of the group norm
    gn_yhat: np.ndarray  # normalized proj, per group, before affine
    gn_inv_sigma: np.ndarray  # (n, n_groups)
    output: np.ndarray

    def replay(self) -> np.ndarray:
        """Re-run the forward pass from the recorded inputs."""
        return fsa_forward(self.graph, self.weights).output


def encode_positions(graph: FeatureGraph, wpos: np.ndarray) -> np.ndarray:
    """Add the learned linear position encoding: features + positions @ wpos."""
    wpos = np.asarray(wpos)
    if wpos.shape != (3, graph.d):
        raise ValueError(f"wpos must have shape (3, {graph.d}), got {wpos.shape}")
    return graph.features + graph.positions.astype(graph.features.dtype) @ wpos


def group_norm(x: np.ndarray, n_groups: int, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5):
    """Per-node group normalization over contiguous channel groups.

    Each node's channels are split into n_groups equal groups; every group is
    standardized with its own biased mean/variance and then passed through the
    per-channel affine transform gamma * xhat + beta.
    """
    x = np.asarray(x)
    n, d = x.shape
    if n_groups < 1 or d % n_groups != 0:
        raise ValueError(f"n_groups={n_groups} must divide d={d}")
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    c = d // n_groups
    grouped = x.reshape(n, n_groups, c)
    mu = grouped.mean(axis=2, keepdims=True)
    var = ((grouped - mu) ** 2).mean(axis=2, keepdims=True)
    inv_sigma = 1.0 / np.sqrt(var + eps)
    yhat = (grouped - mu) * inv_sigma
    out = yhat.reshape(n, d) * gamma + beta
    return out, yhat.reshape(n, d), inv_sigma[:, :, 0]


def fsa_forward(graph: FeatureGraph, w: FsaWeights, want_tape: bool = False):
    """Run one full self-attention block over all nodes of a graph.

    Args:
        graph: FeatureGraph with d matching the weights.
        w: block weights.
        want_tape: also return a GradTape for fsa_backward.

    Returns:
        AttentionOutput, or (AttentionOutput, GradTape) when want_tape is set.
        output = features + group_norm(context @ wo); every attention row is
        a softmax and sums to 1.
    """
    if graph.d != w.d:
        raise ValueError(f"graph feature dim {graph.d} != weight dim {w.d}")
    n, d = graph.n, graph.d
    if n < 1:
        raise ValueError("attention requires at least one node")
    x = graph.features
    xp = x + graph.positions.astype(x.dtype) @ w.wpos
    q = xp @ w.wq
    k = xp @ w.wk
    v = xp @ w.wv

    hd = w.head_dim
    inv_sqrt = 1.0 / math.sqrt(hd)
    attn = np.empty((w.n_heads, n, n), dtype=q.dtype)
    context = np.empty((n, d), dtype=q.dtype)
    for h in range(w.n_heads):
        sl = slice(h * hd, (h + 1) * hd)
        logits = q[:, sl] @ k[:, sl].T
        logits *= inv_sqrt
        logits -= logits.max(axis=1, keepdims=True)
        np.exp(logits, out=logits)
        logits /= logits.sum(axis=1, keepdims=True)
        attn[h] = logits
        context[:, sl] = logits @ v[:, sl]

    proj = context @ w.wo
    gn, yhat, inv_sigma = group_norm(proj, w.n_groups, w.gamma, w.beta, w.eps)
    output = x + gn
    result = AttentionOutput(output=output, attn=attn, context=context)
    if not want_tape:
        return result
    tape = GradTape(
        graph=graph,
        weights=w,
        xp=xp,
        q=q,
        k=k,
        v=v,
        attn=attn,
        context=context,
        proj=proj,
        gn_yhat=yhat,
        gn_inv_sigma=inv_sigma,
        output=output,
    )
    return result, tape


def fsa_backward(tape: GradTape, d_out: np.ndarray) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients of one attention block.

    Args:
        tape: GradTape from fsa_forward(..., want_tape=True).
        d_out: (n, d) gradient of a scalar loss with respect to the output.

    Returns:
        dict with gradients for "features" and every weight tensor
        ("wq", "wk", "wv", "wo", "wpos", "gamma", "beta").
    """
    w = tape.weights
    n, d = tape.xp.shape
    g, c = w.n_groups, w.d // w.n_groups
    d_out = np.asarray(d_out)
    if d_out.shape != (n, d):
        raise ValueError(f"d_out must have shape ({n}, {d}), got {d_out.shape}")

    d_features = d_out.copy()  # residual branch

    # group norm backward
    yhat = tape.gn_yhat
    d_gamma = (d_out * yhat).sum(axis=0)
    d_beta = d_out.sum(axis=0)
    d_yhat = (d_out * w.gamma).reshape(n, g, c)
    yhat_g = yhat.reshape(n, g, c)
    mean_dy = d_yhat.mean(axis=2, keepdims=True)
    mean_dy_y = (d_yhat * yhat_g).mean(axis=2, keepdims=True)
    d_proj = tape.gn_inv_sigma[:, :, None] * (d_yhat - mean_dy - yhat_g * mean_dy_y)
    d_proj = d_proj.reshape(n, d)

    d_wo = tape.context.T @ d_proj
    d_context = d_proj @ w.wo.T

    hd = w.head_dim
    inv_sqrt = 1.0 / math.sqrt(hd)
    d_q = np.zeros_like(tape.q)
    d_k = np.zeros_like(tape.k)
    d_v = np.zeros_like(tape.v)
    for h in range(w.n_heads):
        sl = slice(h * hd, (h + 1) * hd)
        a = tape.attn[h]
        d_a = d_context[:, sl] @ tape.v[:, sl].T
        d_v[:, sl] = a.T @ d_context[:, sl]
        # softmax backward, row-wise
        d_logits = a * (d_a - (d_a * a).sum(axis=1, keepdims=True))
        d_logits *= inv_sqrt
        d_q[:, sl] = d_logits @ tape.k[:, sl]
        d_k[:, sl] = d_logits.T @ tape.q[:, sl]

    d_xp = d_q @ w.wq.T + d_k @ w.wk.T + d_v @ w.wv.T
    d_wq = tape.xp.T @ d_q
    d_wk = tape.xp.T @ d_k
    d_wv = tape.xp.T @ d_v
    d_wpos = tape.graph.positions.astype(d_xp.dtype).T @ d_xp
    d_features += d_xp

    return {
        "features": d_features,
        "wq": d_wq,
        "wk": d_wk,
        "wv": d_wv,
        "wo": d_wo,
        "wpos": d_wpos,
        "gamma": d_gamma,
        "beta": d_beta,
    }


def local_maxpool_baseline(graph: FeatureGraph, nbhd: Neighborhood, h_map: np.ndarray) -> np.ndarray:
    """Fixed-weight local baseline: per-node elementwise max of mapped neighbors.

    Node i receives max over j in its neighborhood of features[j] @ h_map.
    Serves as the non-adaptive contrast to attention aggregation.  A node with
    an empty neighborhood is an error.

    Returns:
        (len(nbhd), d) array.
    """
    h_map = np.asarray(h_map)
    if h_map.shape != (graph.d, graph.d):
        raise ValueError(f"h_map must have shape ({graph.d}, {graph.d}), got {h_map.shape}")
    if (nbhd.counts == 0).any():
        bad = int(np.flatnonzero(nbhd.counts == 0)[0])
        raise ValueError(f"node {bad} has an empty neighborhood")
    mapped = graph.features @ h_map
    idx = np.where(nbhd.indices >= 0, nbhd.indices, 0)
    gathered = mapped[idx]
    gathered[~nbhd.valid_mask()] = -np.inf
    return gathered.max(axis=1)
