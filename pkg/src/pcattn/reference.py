"""Slow, independently coded reference implementations.

Everything in this module is written as direct scalar translations of the
defining formulas — plain Python lists, explicit double loops, math.exp — with
no matrix library, so the fast array implementations can be validated against
genuinely independent code.  Inputs and outputs are nested lists of floats.
"""

from __future__ import annotations

import math


def _mat_vec(w, x):
    """Row-vector map: returns x @ w for w given as a list of rows (in, out)."""
    n_in = len(w)
    n_out = len(w[0])
    out = [0.0] * n_out
    for i in range(n_in):
        xi = x[i]
        row = w[i]
        for j in range(n_out):
            out[j] += xi * row[j]
    return out


def group_norm_reference(x, n_groups, gamma, beta, eps):
    """Scalar group normalization of one (n, d) list-of-rows."""
    n = len(x)
    d = len(x[0])
    c = d // n_groups
    out = []
    for i in range(n):
        row = [0.0] * d
        for g in range(n_groups):
            vals = x[i][g * c : (g + 1) * c]
            mu = sum(vals) / c
            var = sum((v - mu) ** 2 for v in vals) / c
            inv = 1.0 / math.sqrt(var + eps)
            for a, v in enumerate(vals):
                ch = g * c + a
                row[ch] = (v - mu) * inv * gamma[ch] + beta[ch]
        out.append(row)
    return out


def softmax_row_reference(row):
    """Numerically guarded softmax of one list of logits."""
    m = max(row)
    exps = [math.exp(v - m) for v in row]
    s = sum(exps)
    return [e / s for e in exps]


def fsa_reference(features, positions, wq, wk, wv, wo, wpos, gamma, beta, n_heads, n_groups, eps):
    """Scalar multi-head self-attention block.

    Mirrors the block definition exactly: position-encoded features, per-head
    scaled dot-product attention with row softmax, concatenated context,
    output projection, group norm, residual add.

    Returns:
        (output, attn, context) as nested lists; attn is indexed
        [head][query][key].
    """
    n = len(features)
    d = len(features[0])
    hd = d // n_heads
    scale = 1.0 / math.sqrt(hd)

    xp = []
    for i in range(n):
        enc = _mat_vec(wpos, positions[i])
        xp.append([features[i][j] + enc[j] for j in range(d)])

    q = [_mat_vec(wq, xp[i]) for i in range(n)]
    k = [_mat_vec(wk, xp[i]) for i in range(n)]
    v = [_mat_vec(wv, xp[i]) for i in range(n)]

    attn = []
    context = [[0.0] * d for _ in range(n)]
    for h in range(n_heads):
        lo = h * hd
        head_rows = []
        for i in range(n):
            logits = []
            for j in range(n):
                dot = 0.0
                for a in range(lo, lo + hd):
                    dot += q[i][a] * k[j][a]
                logits.append(dot * scale)
            weights = softmax_row_reference(logits)
            head_rows.append(weights)
            for a in range(lo, lo + hd):
                acc = 0.0
                for j in range(n):
                    acc += weights[j] * v[j][a]
                context[i][a] = acc
        attn.append(head_rows)

    proj = [_mat_vec(wo, context[i]) for i in range(n)]
    normed = group_norm_reference(proj, n_groups, gamma, beta, eps)
    output = [[features[i][j] + normed[i][j] for j in range(d)] for i in range(n)]
    return output, attn, context


def _sq_dist(p, q):
    dx = p[0] - q[0]
    dy = p[1] - q[1]
    dz = p[2] - q[2]
    return dx * dx + dy * dy + dz * dz


def fps_reference(positions, m, start=0):
    """Exhaustive max-min sampling: recompute every distance at every step."""
    n = len(positions)
    selected = [start]
    while len(selected) < m:
        best_idx = -1
        best_dist = -1.0
        for j in range(n):
            if j in selected:
                continue
            dm = min(_sq_dist(positions[j], positions[s]) for s in selected)
            if dm > best_dist:  # strict: ties keep the lowest index
                best_dist = dm
                best_idx = j
        selected.append(best_idx)
    return selected


def knn_reference(query, base, k):
    """Exhaustive k nearest neighbors, ties by ascending base index.

    Returns:
        list of per-query lists of (index, squared distance) pairs.
    """
    n = len(base)
    kk = min(k, n)
    out = []
    for qp in query:
        d = [(_sq_dist(qp, base[j]), j) for j in range(n)]
        d.sort(key=lambda t: (t[0], t[1]))
        out.append([(j, dist) for dist, j in d[:kk]])
    return out


def ball_query_reference(query, base, radius, max_samples):
    """Exhaustive radius search, nearest first, capped at max_samples."""
    r2 = radius * radius
    out = []
    for qp in query:
        d = [(_sq_dist(qp, base[j]), j) for j in range(len(base))]
        d.sort(key=lambda t: (t[0], t[1]))
        hits = [(j, dist) for dist, j in d if dist <= r2]
        out.append(hits[:max_samples])
    return out
