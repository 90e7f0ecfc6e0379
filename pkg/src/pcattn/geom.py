"""Geometric sampling and neighborhood primitives for point sets.

All routines take (n, 3) xyz coordinate arrays, work in float64, and compute
squared Euclidean distances directly as sum((a - b)**2) so that results are
exactly reproducible.  Distance ties are always broken by ascending point
index, which makes every selection fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .parallel import map_chunks

# Queries are processed in fixed-size blocks.  The block size is independent
# of the thread count so results never depend on the degree of parallelism.
_QUERY_CHUNK = 2048


def _as_xyz(arr, name: str) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64)
    if out.ndim != 2 or out.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {out.shape}")
    if out.size and not np.isfinite(out).all():
        raise ValueError(f"{name} contains non-finite coordinates")
    return out


def _sq_dists_raw(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Accumulate one coordinate at a time: ((dx**2 + dy**2) + dz**2) is the
    # same floating-point summation order as sum((a - b)**2, axis=-1), but
    # avoids materializing a (p, q, 3) temporary.
    d = a[:, 0, None] - b[None, :, 0]
    np.multiply(d, d, out=d)
    for c in (1, 2):
        diff = a[:, c, None] - b[None, :, c]
        np.multiply(diff, diff, out=diff)
        d += diff
    return d


def pairwise_sq_dists(a, b) -> np.ndarray:
    """Squared Euclidean distances between two point sets.

    Args:
        a: (p, 3) coordinates.
        b: (q, 3) coordinates.

    Returns:
        (p, q) float64 array where entry (i, j) is sum((a[i] - b[j])**2).
    """
    a = _as_xyz(a, "a")
    b = _as_xyz(b, "b")
    return _sq_dists_raw(a, b)


def _rank_candidates(
    cand: np.ndarray, d: np.ndarray, keep_cols: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Order candidate entries per row and keep the first keep_cols of each.

    cand is a boolean (rows, n) mask of entries that may appear in the result;
    it must contain every entry the equivalent full stable argsort would keep.
    Candidates are ranked by (distance, column index) within their row --
    identical ordering to a stable argsort of the full row -- and positions
    past keep_cols are dropped.

    Returns:
        (row, slot, entry) index triples: result[row, slot] = entry, with
        distances d[row, entry].  Slots not covered stay at their padding.
    """
    rows, cols = np.nonzero(cand)
    vals = d[rows, cols]
    order = np.lexsort((cols, vals, rows))
    rows = rows[order]
    cols = cols[order]
    counts = np.bincount(rows, minlength=cand.shape[0])
    offsets = np.concatenate(([0], np.cumsum(counts[:-1])))
    slots = np.arange(rows.size) - offsets[rows]
    keep = slots < keep_cols
    return rows[keep], slots[keep], cols[keep]


@dataclass(frozen=True)
class IndexSet:
    """An ordered subset of node indices drawn from a parent set of size n.

    Invariants: indices are unique, int64, and all within [0, n).
    """

    indices: np.ndarray
    n: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "indices", idx)
        if idx.ndim != 1 or idx.size < 1:
            raise ValueError(f"indices must be a non-empty 1-d array, got shape {idx.shape}")
        if self.n < 1:
            raise ValueError(f"parent size n must be >= 1, got {self.n}")
        if idx.min() < 0 or idx.max() >= self.n:
            raise ValueError(f"indices must lie in [0, {self.n})")
        if np.unique(idx).size != idx.size:
            raise ValueError("indices contain duplicates")

    def __len__(self) -> int:
        return int(self.indices.size)


@dataclass(frozen=True)
class Neighborhood:
    """Per-query neighbor lists stored as padded arrays.

    Row i holds counts[i] valid entries: indices[i, :counts[i]] are neighbor
    indices into the base set and sq_dists[i, :counts[i]] their squared
    distances, sorted by ascending distance with ties broken by ascending
    index.  Padding entries are -1 / +inf.
    """

    indices: np.ndarray  # (q, cap) int64
    sq_dists: np.ndarray  # (q, cap) float64
    counts: np.ndarray  # (q,) int64

    def __post_init__(self):
        if self.indices.shape != self.sq_dists.shape:
            raise ValueError("indices and sq_dists must have identical shapes")
        if self.counts.shape != (self.indices.shape[0],):
            raise ValueError("counts must have one entry per query row")

    def __len__(self) -> int:
        return int(self.indices.shape[0])

    @property
    def cap(self) -> int:
        return int(self.indices.shape[1])

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Valid (indices, squared distances) for query row i."""
        c = int(self.counts[i])
        return self.indices[i, :c], self.sq_dists[i, :c]

    def valid_mask(self) -> np.ndarray:
        """(q, cap) boolean mask of valid entries."""
        return np.arange(self.cap)[None, :] < self.counts[:, None]


def fps(positions, m: int, start: int = 0) -> IndexSet:
    """Farthest point sampling by greedy max-min selection.

    Starting from the seed index, repeatedly picks the point whose minimum
    squared distance to the already-selected set is largest; ties go to the
    lowest index.  Any prefix of the result equals the result for a smaller m
    on the same inputs.

    Args:
        positions: (n, 3) coordinates.
        m: number of points to select, 1 <= m <= n.
        start: seed index (default 0); exposed so callers can randomize
            seeding explicitly while the default stays deterministic.

    Returns:
        IndexSet of m unique indices, first entry equal to start.
    """
    pos = _as_xyz(positions, "positions")
    n = pos.shape[0]
    if n == 0:
        raise ValueError("cannot sample from an empty point set")
    if not 1 <= m <= n:
        raise ValueError(f"m must be in [1, {n}], got {m}")
    if not 0 <= start < n:
        raise ValueError(f"start must be in [0, {n}), got {start}")

    selected = np.empty(m, dtype=np.int64)
    selected[0] = start
    # Work on one contiguous array per coordinate; the accumulation order
    # ((dx**2 + dy**2) + dz**2) matches sum((pos - pos[j])**2, axis=1) exactly.
    xs, ys, zs = (np.ascontiguousarray(pos[:, c]) for c in range(3))
    acc = np.empty(n, dtype=np.float64)
    tmp = np.empty(n, dtype=np.float64)

    def sq_dists_to(j: int, out: np.ndarray) -> np.ndarray:
        np.subtract(xs, xs[j], out=out)
        np.multiply(out, out, out=out)
        np.subtract(ys, ys[j], out=tmp)
        np.multiply(tmp, tmp, out=tmp)
        out += tmp
        np.subtract(zs, zs[j], out=tmp)
        np.multiply(tmp, tmp, out=tmp)
        out += tmp
        return out

    min_d = sq_dists_to(start, np.empty(n, dtype=np.float64))
    min_d[start] = -np.inf  # selected points can never be picked again
    for i in range(1, m):
        nxt = int(np.argmax(min_d))  # argmax returns the lowest index on ties
        selected[i] = nxt
        np.minimum(min_d, sq_dists_to(nxt, acc), out=min_d)
        min_d[nxt] = -np.inf
    return IndexSet(indices=selected, n=n)


def knn(query, base, k: int) -> Neighborhood:
    """Brute-force k nearest neighbors.

    Every query row receives exactly min(k, len(base)) neighbors, sorted by
    ascending squared distance and then by ascending base index.

    Args:
        query: (q, 3) query coordinates.
        base: (n, 3) base coordinates.
        k: requested neighbor count, >= 1.

    Returns:
        Neighborhood with uniform counts of min(k, n).
    """
    q_pos = _as_xyz(query, "query")
    b_pos = _as_xyz(base, "base")
    n = b_pos.shape[0]
    if n == 0:
        raise ValueError("base point set is empty")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    kk = min(k, n)

    def work(s, t):
        d = _sq_dists_raw(q_pos[s:t], b_pos)
        nb = d.shape[0]
        if kk == 1:
            # argmin returns the lowest index on ties, matching a stable sort
            best = np.argmin(d, axis=1)
            return best[:, None].astype(np.int64), d[np.arange(nb), best][:, None]
        if kk >= n:
            # keeping every column: a full stable sort is the cheapest route
            order = np.argsort(d, axis=1, kind="stable")
            return order.astype(np.int64), np.take_along_axis(d, order, axis=1)
        # The kk-th smallest value per row is independent of how a partition
        # breaks ties, so every entry of the final result has distance <= it;
        # rank only that candidate set instead of sorting whole rows.
        thresh = np.partition(d, kk - 1, axis=1)[:, kk - 1]
        rows, slots, cols = _rank_candidates(d <= thresh[:, None], d, kk)
        idx = np.empty((nb, kk), dtype=np.int64)
        dist = np.empty((nb, kk), dtype=np.float64)
        idx[rows, slots] = cols
        dist[rows, slots] = d[rows, cols]
        return idx, dist

    parts = map_chunks(work, q_pos.shape[0], _QUERY_CHUNK)
    nq = q_pos.shape[0]
    if not parts:
        idx = np.empty((0, kk), dtype=np.int64)
        dist = np.empty((0, kk), dtype=np.float64)
    else:
        idx = np.concatenate([p[0] for p in parts], axis=0).astype(np.int64)
        dist = np.concatenate([p[1] for p in parts], axis=0)
    counts = np.full(nq, kk, dtype=np.int64)
    return Neighborhood(indices=idx, sq_dists=dist, counts=counts)


def ball_query(query, base, radius: float, max_samples: int) -> Neighborhood:
    """Neighbors within a radius, nearest first, capped at max_samples.

    Membership uses the inclusive test sq_dist <= radius**2.  Rows with no
    point in radius are valid and simply have count 0.

    Args:
        query: (q, 3) query coordinates.
        base: (n, 3) base coordinates.
        radius: ball radius, > 0.
        max_samples: per-query cap on returned neighbors, >= 1.

    Returns:
        Neighborhood padded to max_samples columns.
    """
    q_pos = _as_xyz(query, "query")
    b_pos = _as_xyz(base, "base")
    if b_pos.shape[0] == 0:
        raise ValueError("base point set is empty")
    if not radius > 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    if max_samples < 1:
        raise ValueError(f"max_samples must be >= 1, got {max_samples}")
    r2 = float(radius) * float(radius)
    cap = min(max_samples, b_pos.shape[0])

    def work(s, t):
        d = _sq_dists_raw(q_pos[s:t], b_pos)
        nb, n = d.shape
        in_ball = d <= r2
        cnt = np.minimum(in_ball.sum(axis=1), cap)
        cand = in_ball
        if cap < n and np.count_nonzero(in_ball) > nb * max(4 * cap, 64):
            # Dense balls: shrink the candidate set to entries no farther
            # than the cap-th nearest in-ball value (plus its ties), which
            # is deterministic regardless of partition internals.  Rows with
            # fewer than cap in-ball entries get an inf threshold, keeping
            # their candidate set the plain in-ball mask.
            masked = np.where(in_ball, d, np.inf)
            thresh = np.partition(masked, cap - 1, axis=1)[:, cap - 1]
            cand = in_ball & (d <= thresh[:, None])
        rows, slots, cols = _rank_candidates(cand, d, cap)
        idx = np.full((nb, cap), -1, dtype=np.int64)
        dist = np.full((nb, cap), np.inf, dtype=np.float64)
        idx[rows, slots] = cols
        dist[rows, slots] = d[rows, cols]
        return idx, dist, cnt

    parts = map_chunks(work, q_pos.shape[0], _QUERY_CHUNK)
    if not parts:
        return Neighborhood(
            indices=np.empty((0, cap), dtype=np.int64),
            sq_dists=np.empty((0, cap), dtype=np.float64),
            counts=np.empty(0, dtype=np.int64),
        )
    idx = np.concatenate([p[0] for p in parts], axis=0)
    dist = np.concatenate([p[1] for p in parts], axis=0)
    counts = np.concatenate([p[2] for p in parts], axis=0).astype(np.int64)
    return Neighborhood(indices=idx, sq_dists=dist, counts=counts)


def ball_query_with_fallback(query, base, radius: float, max_samples: int) -> Neighborhood:
    """ball_query, except empty rows receive their single nearest base point.

    Identical to running ball_query and then a 1-nearest-neighbor lookup for
    every query with no point in radius, but both are answered from one
    distance computation.  A fallback row has count 1 and its entry's squared
    distance exceeds radius**2, which is how callers can recognize it.

    Returns:
        Neighborhood padded to max_samples columns; every count is >= 1.
    """
    q_pos = _as_xyz(query, "query")
    b_pos = _as_xyz(base, "base")
    n = b_pos.shape[0]
    if n == 0:
        raise ValueError("base point set is empty")
    if not radius > 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    if max_samples < 1:
        raise ValueError(f"max_samples must be >= 1, got {max_samples}")
    r2 = float(radius) * float(radius)
    cap = min(max_samples, n)

    def work(s, t):
        d = _sq_dists_raw(q_pos[s:t], b_pos)
        nb = d.shape[0]
        in_ball = d <= r2
        cnt = np.minimum(in_ball.sum(axis=1), cap)
        cand = in_ball
        if cap < n and np.count_nonzero(in_ball) > nb * max(4 * cap, 64):
            masked = np.where(in_ball, d, np.inf)
            thresh = np.partition(masked, cap - 1, axis=1)[:, cap - 1]
            cand = in_ball & (d <= thresh[:, None])
        rows, slots, cols = _rank_candidates(cand, d, cap)
        idx = np.full((nb, cap), -1, dtype=np.int64)
        dist = np.full((nb, cap), np.inf, dtype=np.float64)
        idx[rows, slots] = cols
        dist[rows, slots] = d[rows, cols]
        empty = cnt == 0
        if empty.any():
            sub = d[empty]
            # argmin returns the lowest index on ties, matching a stable sort
            nearest = np.argmin(sub, axis=1)
            idx[empty, 0] = nearest
            dist[empty, 0] = sub[np.arange(sub.shape[0]), nearest]
            cnt[empty] = 1
        return idx, dist, cnt

    parts = map_chunks(work, q_pos.shape[0], _QUERY_CHUNK)
    if not parts:
        return Neighborhood(
            indices=np.empty((0, cap), dtype=np.int64),
            sq_dists=np.empty((0, cap), dtype=np.float64),
            counts=np.empty(0, dtype=np.int64),
        )
    idx = np.concatenate([p[0] for p in parts], axis=0)
    dist = np.concatenate([p[1] for p in parts], axis=0)
    counts = np.concatenate([p[2] for p in parts], axis=0).astype(np.int64)
    return Neighborhood(indices=idx, sq_dists=dist, counts=counts)
