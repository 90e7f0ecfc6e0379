"""Independent reference implementations used as test oracles.

Everything here is written in the most literal style possible -- scalar loops,
python dicts, no vectorization, no code shared with the package under test --
so that agreement between the two is meaningful evidence of correctness.
"""

from __future__ import annotations

import math

import numpy as np


# ---------------------------------------------------------------------------
# full self-attention


def oracle_fsa(features, positions, tensors, n_heads, n_groups, eps=1e-5):
    """Double-loop reference for one full self-attention block.

    Returns (output (n, d), attn (n_heads, n, n)).
    """
    x = np.asarray(features, dtype=np.float64)
    pos = np.asarray(positions, dtype=np.float64)
    wq, wk, wv = tensors["wq"], tensors["wk"], tensors["wv"]
    wo, wpos = tensors["wo"], tensors["wpos"]
    gamma, beta = tensors["gamma"], tensors["beta"]
    n, d = x.shape
    hd = d // n_heads

    xp = np.zeros((n, d))
    for i in range(n):
        for j in range(d):
            acc = x[i, j]
            for a in range(3):
                acc += pos[i, a] * wpos[a, j]
            xp[i, j] = acc

    def project(w):
        out = np.zeros((n, d))
        for i in range(n):
            for j in range(d):
                acc = 0.0
                for a in range(d):
                    acc += xp[i, a] * w[a, j]
                out[i, j] = acc
        return out

    q, k, v = project(wq), project(wk), project(wv)

    attn = np.zeros((n_heads, n, n))
    context = np.zeros((n, d))
    for h in range(n_heads):
        lo = h * hd
        for i in range(n):
            logits = []
            for j in range(n):
                acc = 0.0
                for a in range(hd):
                    acc += q[i, lo + a] * k[j, lo + a]
                logits.append(acc / math.sqrt(hd))
            peak = max(logits)
            exps = [math.exp(val - peak) for val in logits]
            total = sum(exps)
            for j in range(n):
                attn[h, i, j] = exps[j] / total
            for a in range(hd):
                acc = 0.0
                for j in range(n):
                    acc += attn[h, i, j] * v[j, lo + a]
                context[i, lo + a] = acc

    proj = np.zeros((n, d))
    for i in range(n):
        for j in range(d):
            acc = 0.0
            for a in range(d):
                acc += context[i, a] * wo[a, j]
            proj[i, j] = acc

    c = d // n_groups
    output = np.zeros((n, d))
    for i in range(n):
        for g in range(n_groups):
            vals = [proj[i, g * c + a] for a in range(c)]
            mu = sum(vals) / c
            var = sum((val - mu) ** 2 for val in vals) / c
            inv = 1.0 / math.sqrt(var + eps)
            for a in range(c):
                ch = g * c + a
                yhat = (proj[i, ch] - mu) * inv
                output[i, ch] = x[i, ch] + gamma[ch] * yhat + beta[ch]
    return output, attn


# ---------------------------------------------------------------------------
# geometry


def _sqdist(p, q):
    # Plain multiplies: scalar ``**`` can round differently than an IEEE
    # multiply for rare operands, and the geometry tests compare bit-exactly.
    dx = p[0] - q[0]
    dy = p[1] - q[1]
    dz = p[2] - q[2]
    return dx * dx + dy * dy + dz * dz


def oracle_fps(positions, m, start=0):
    """Greedy max-min sampling; ties resolved toward the lowest index."""
    pos = np.asarray(positions, dtype=np.float64)
    n = pos.shape[0]
    selected = [start]
    min_d = [_sqdist(pos[i], pos[start]) for i in range(n)]
    min_d[start] = -math.inf
    for _ in range(1, m):
        best, best_val = 0, -math.inf
        for i in range(n):
            if min_d[i] > best_val:
                best, best_val = i, min_d[i]
        selected.append(best)
        for i in range(n):
            dist = _sqdist(pos[i], pos[best])
            if dist < min_d[i]:
                min_d[i] = dist
        min_d[best] = -math.inf
    return np.array(selected, dtype=np.int64)


def oracle_knn(query, base, k):
    """Per-query sorted (sq_dist, index) lists truncated to k entries."""
    q = np.asarray(query, dtype=np.float64)
    b = np.asarray(base, dtype=np.float64)
    kk = min(k, b.shape[0])
    idx_rows, dist_rows = [], []
    for i in range(q.shape[0]):
        pairs = sorted((_sqdist(q[i], b[j]), j) for j in range(b.shape[0]))
        idx_rows.append([j for _, j in pairs[:kk]])
        dist_rows.append([dist for dist, _ in pairs[:kk]])
    return (
        np.array(idx_rows, dtype=np.int64).reshape(q.shape[0], kk),
        np.array(dist_rows, dtype=np.float64).reshape(q.shape[0], kk),
    )


def oracle_ball(query, base, radius, max_samples):
    """In-radius neighbors, nearest first, padded with -1 / inf."""
    q = np.asarray(query, dtype=np.float64)
    b = np.asarray(base, dtype=np.float64)
    cap = min(max_samples, b.shape[0])
    r2 = radius * radius
    nq = q.shape[0]
    idx = np.full((nq, cap), -1, dtype=np.int64)
    dist = np.full((nq, cap), np.inf, dtype=np.float64)
    counts = np.zeros(nq, dtype=np.int64)
    for i in range(nq):
        pairs = sorted((_sqdist(q[i], b[j]), j) for j in range(b.shape[0]))
        inside = [(dist_ij, j) for dist_ij, j in pairs if dist_ij <= r2][:cap]
        counts[i] = len(inside)
        for slot, (dist_ij, j) in enumerate(inside):
            idx[i, slot] = j
            dist[i, slot] = dist_ij
    return idx, dist, counts


def oracle_nearest(query, base):
    """Index of the closest base point per query, lowest index on ties."""
    q = np.asarray(query, dtype=np.float64)
    b = np.asarray(base, dtype=np.float64)
    out = []
    for i in range(q.shape[0]):
        best, best_val = 0, math.inf
        for j in range(b.shape[0]):
            dist = _sqdist(q[i], b[j])
            if dist < best_val:
                best, best_val = j, dist
        out.append(best)
    return np.array(out, dtype=np.int64)


# ---------------------------------------------------------------------------
# discretization


def oracle_discretize(points, range_min, range_max, cell_size, mode, weight):
    """Dict-based grouping reference for pillar/voxel discretization.

    Returns (features, positions) with nodes ordered by ascending flattened
    cell index (row-major, x then y then z).
    """
    pts = np.asarray(points, dtype=np.float64)
    lo = np.asarray(range_min, dtype=np.float64)
    hi = np.asarray(range_max, dtype=np.float64)
    cs = np.asarray(cell_size, dtype=np.float64)
    naxes = 2 if mode == "pillar" else 3
    counts = [max(1, math.ceil((hi[a] - lo[a]) / cs[a])) for a in range(naxes)]

    cells: dict[int, list[int]] = {}
    for i in range(pts.shape[0]):
        coords = []
        for a in range(naxes):
            c = math.floor((pts[i, a] - lo[a]) / cs[a])
            coords.append(min(c, counts[a] - 1))
        if naxes == 2:
            flat = coords[0] * counts[1] + coords[1]
        else:
            flat = (coords[0] * counts[1] + coords[1]) * counts[2] + coords[2]
        cells.setdefault(flat, []).append(i)

    weight = np.asarray(weight, dtype=np.float64)
    d = weight.shape[1]
    features, positions = [], []
    for flat in sorted(cells):
        members = cells[flat]
        centroid = [
            sum(pts[i, a] for i in members) / len(members) for a in range(3)
        ]
        feat = [-math.inf] * d
        for i in members:
            desc = [pts[i, 0] - centroid[0], pts[i, 1] - centroid[1], pts[i, 2] - centroid[2], pts[i, 3]]
            for j in range(d):
                val = sum(desc[a] * weight[a, j] for a in range(4))
                if val > feat[j]:
                    feat[j] = val
        features.append(feat)
        positions.append(centroid)
    return (
        np.array(features, dtype=np.float64).reshape(len(cells), d),
        np.array(positions, dtype=np.float64).reshape(len(cells), 3),
    )


# ---------------------------------------------------------------------------
# deformable pipeline pieces


def oracle_deform(features, positions, subset_idx, w_offset, w_align, radius, k):
    """Loop reference for learned vertex refinement.

    For sampled node i with in-radius neighbors j (nearest first, capped):
        magnitude_i = relu( sum_j dot((x_i - x_j) @ w_offset, v_i - v_j) ) / k_i
        refined_i   = v_i + tanh(w_align * magnitude_i)
    """
    x = np.asarray(features, dtype=np.float64)
    pos = np.asarray(positions, dtype=np.float64)
    w_offset = np.asarray(w_offset, dtype=np.float64)
    w_align = np.asarray(w_align, dtype=np.float64)
    refined, displacements, magnitudes = [], [], []
    idx_rows, dist_rows, cnt_rows = oracle_ball(pos[subset_idx], pos, radius, k)
    for row, i in enumerate(subset_idx):
        total = 0.0
        count = int(cnt_rows[row])
        for slot in range(count):
            j = int(idx_rows[row, slot])
            fd = x[i] - x[j]
            proj = [sum(fd[a] * w_offset[a, c] for a in range(x.shape[1])) for c in range(3)]
            pd = pos[i] - pos[j]
            total += proj[0] * pd[0] + proj[1] * pd[1] + proj[2] * pd[2]
        mag = max(total, 0.0) / max(count, 1)
        disp = [math.tanh(w_align[c] * mag) for c in range(3)]
        limit = np.nextafter(1.0, 0.0)
        disp = [min(max(val, -limit), limit) for val in disp]
        magnitudes.append(mag)
        displacements.append(disp)
        refined.append([pos[i, c] + disp[c] for c in range(3)])
    return (
        np.array(refined, dtype=np.float64),
        np.array(displacements, dtype=np.float64),
        np.array(magnitudes, dtype=np.float64),
    )


def oracle_aggregate(features, positions, refined, w_out, radius, k):
    """Loop reference for neighborhood max-pooling at refined positions."""
    x = np.asarray(features, dtype=np.float64)
    w_out = np.asarray(w_out, dtype=np.float64)
    d = x.shape[1]
    mapped = np.zeros_like(x)
    for i in range(x.shape[0]):
        for j in range(d):
            mapped[i, j] = sum(x[i, a] * w_out[a, j] for a in range(d))
    idx_rows, _, cnt_rows = oracle_ball(refined, positions, radius, k)
    nearest = oracle_nearest(refined, positions)
    pooled = np.zeros((len(refined), d))
    for row in range(len(refined)):
        count = int(cnt_rows[row])
        if count == 0:
            pooled[row] = mapped[nearest[row]]
            continue
        for j in range(d):
            pooled[row, j] = max(mapped[int(idx_rows[row, slot]), j] for slot in range(count))
    return pooled


def oracle_idw(subset_feats, subset_pos, target_pos, radius, max_samples, mlp, eps=1e-8):
    """Loop reference for inverse-distance up-sampling with 1-NN fallback."""
    feats = np.asarray(subset_feats, dtype=np.float64)
    d = feats.shape[1]
    idx_rows, dist_rows, cnt_rows = oracle_ball(target_pos, subset_pos, radius, max_samples)
    nearest = oracle_nearest(target_pos, subset_pos)
    blended = np.zeros((len(target_pos), d))
    for row in range(len(target_pos)):
        count = int(cnt_rows[row])
        if count == 0:
            members = [(1.0, nearest[row])]
        else:
            members = [
                (1.0 / (dist_rows[row, slot] + eps), int(idx_rows[row, slot]))
                for slot in range(count)
            ]
        total = sum(wgt for wgt, _ in members)
        for j in range(d):
            blended[row, j] = sum(wgt / total * feats[sub, j] for wgt, sub in members)
    mlp = np.asarray(mlp, dtype=np.float64)
    out = np.zeros_like(blended)
    for row in range(blended.shape[0]):
        for j in range(d):
            out[row, j] = sum(blended[row, a] * mlp[a, j] for a in range(d))
    return out


def oracle_dsa(features, positions, weights, m, deform_radius, pool_radius, k, fps_start=0):
    """Compose the oracle pieces into a full deformable-attention forward pass.

    weights is a dict with: fsa tensors + n_heads/n_groups/eps, w_offset,
    w_align, w_out, interp_radius, interp_samples, mlp.
    """
    subset = oracle_fps(positions, m, start=fps_start)
    refined, _, _ = oracle_deform(
        features, positions, subset, weights["w_offset"], weights["w_align"], deform_radius, k
    )
    pooled = oracle_aggregate(features, positions, refined, weights["w_out"], pool_radius, k)
    sub_out, sub_attn = oracle_fsa(
        pooled, refined, weights["fsa"], weights["n_heads"], weights["n_groups"], weights["eps"]
    )
    delta = sub_out - pooled
    up = oracle_idw(
        delta, refined, positions, weights["interp_radius"], weights["interp_samples"], weights["mlp"]
    )
    return np.asarray(features, dtype=np.float64) + up, sub_attn
