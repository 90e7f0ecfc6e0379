"""Point-cloud loading, range cropping, and grid discretization.

Scans are stored in the common LiDAR binary layout: consecutive little-endian
float32 records of (x, y, z, intensity).  Discretization groups points into
pillar (XY) or voxel (XYZ) cells, or passes points through one-to-one, and
produces a FeatureGraph whose node order is canonical (ascending flattened
cell index) so that downstream results never depend on scan point order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_RECORD_BYTES = 16  # four little-endian float32 values per point

MODES = ("pillar", "voxel", "point")


@dataclass(frozen=True)
class PointCloud:
    """An (n, 4) array of points: x, y, z, intensity.

    Invariants: all values finite; intensities within [0, 1].
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"points must have shape (n, 4), got {pts.shape}")
        finite = np.isfinite(pts).all(axis=1)
        if not finite.all():
            bad = int(np.flatnonzero(~finite)[0])
            raise ValueError(f"non-finite value at point index {bad}")
        inten = pts[:, 3]
        if inten.size and (inten.min() < 0.0 or inten.max() > 1.0):
            bad = int(np.flatnonzero((inten < 0.0) | (inten > 1.0))[0])
            raise ValueError(
                f"intensity out of [0, 1] at point index {bad}: {inten[bad]!r}"
            )

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned crop range plus cell size.

    cell_size has two entries (pillar XY footprint) or three (voxel).
    Invariants: range_min < range_max per axis, all cell sizes positive.
    """

    range_min: np.ndarray  # (3,)
    range_max: np.ndarray  # (3,)
    cell_size: np.ndarray  # (2,) or (3,)

    def __post_init__(self):
        lo = np.asarray(self.range_min, dtype=np.float64).reshape(-1)
        hi = np.asarray(self.range_max, dtype=np.float64).reshape(-1)
        cs = np.asarray(self.cell_size, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "range_min", lo)
        object.__setattr__(self, "range_max", hi)
        object.__setattr__(self, "cell_size", cs)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("range_min and range_max must each have 3 entries")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all() and np.isfinite(cs).all()):
            raise ValueError("grid spec contains non-finite values")
        if not (lo < hi).all():
            raise ValueError(f"range_min must be < range_max per axis, got {lo} vs {hi}")
        if cs.shape not in ((2,), (3,)):
            raise ValueError(f"cell_size must have 2 or 3 entries, got shape {cs.shape}")
        if not (cs > 0).all():
            raise ValueError(f"cell sizes must be positive, got {cs}")

    def cell_counts(self, mode: str) -> np.ndarray:
        """Number of cells per axis for the given mode (2 or 3 entries)."""
        naxes = 2 if mode == "pillar" else 3
        if mode == "voxel" and self.cell_size.shape[0] != 3:
            raise ValueError("voxel mode requires a 3-entry cell_size")
        extent = self.range_max[:naxes] - self.range_min[:naxes]
        counts = np.ceil(extent / self.cell_size[:naxes]).astype(np.int64)
        return np.maximum(counts, 1)


@dataclass(frozen=True)
class FeatureGraph:
    """Graph nodes: (n, d) features paired with (n, 3) positions."""

    features: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        feat = np.asarray(self.features)
        pos = np.asarray(self.positions, dtype=np.float64)
        object.__setattr__(self, "features", feat)
        object.__setattr__(self, "positions", pos)
        if feat.ndim != 2 or feat.shape[1] < 1:
            raise ValueError(f"features must have shape (n, d) with d >= 1, got {feat.shape}")
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must have shape (n, 3), got {pos.shape}")
        if feat.shape[0] != pos.shape[0]:
            raise ValueError(
                f"features and positions disagree on n: {feat.shape[0]} vs {pos.shape[0]}"
            )
        if feat.size and not np.isfinite(feat).all():
            raise ValueError("features contain non-finite values")
        if pos.size and not np.isfinite(pos).all():
            raise ValueError("positions contain non-finite values")

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def d(self) -> int:
        return int(self.features.shape[1])


@dataclass(frozen=True)
class EncoderWeights:
    """Shared linear map from per-point descriptors to node feature space.

    The descriptor is (dx, dy, dz, intensity) where dx/dy/dz are offsets from
    the member point to its cell centroid, so weight has shape (4, d).
    """

    weight: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        object.__setattr__(self, "weight", w)
        if w.ndim != 2 or w.shape[0] != 4 or w.shape[1] < 1:
            raise ValueError(f"encoder weight must have shape (4, d), got {w.shape}")
        if not np.isfinite(w).all():
            raise ValueError("encoder weight contains non-finite values")

    @property
    def d(self) -> int:
        return int(self.weight.shape[1])


def random_encoder_weights(d: int, seed: int, scale: float = 0.5) -> EncoderWeights:
    """Seeded Gaussian encoder weights, deterministic for a given (d, seed)."""
    rng = np.random.default_rng(seed)
    return EncoderWeights(weight=rng.normal(0.0, scale, size=(4, d)))


def load_scan(path) -> PointCloud:
    """Read a binary scan of little-endian float32 (x, y, z, intensity) records.

    Intensities are clamped into [0, 1].  A file whose size is not a multiple
    of 16 bytes is rejected as truncated, and any non-finite value is rejected
    with the index of the offending point.  An empty file yields an empty
    cloud.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) % _RECORD_BYTES != 0:
        raise ValueError(
            f"truncated scan {path}: {len(raw)} bytes is not a multiple of {_RECORD_BYTES}"
        )
    pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(np.float64)
    finite = np.isfinite(pts).all(axis=1)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise ValueError(f"non-finite value at point index {bad} in {path}")
    pts = pts.copy()
    np.clip(pts[:, 3], 0.0, 1.0, out=pts[:, 3])
    return PointCloud(points=pts)


def write_scan(path, pc: PointCloud) -> None:
    """Write a PointCloud in the binary scan layout (float32, little-endian)."""
    with open(path, "wb") as fh:
        fh.write(pc.points.astype("<f4").tobytes())


def synthetic_scan(n: int, seed: int, spec: GridSpec | None = None) -> PointCloud:
    """Uniform random scan inside a grid range, for fixtures and demos.

    Points are drawn uniformly inside the grid range (default: the common
    front-camera LiDAR range [0, 70.4) x [-40, 40) x [-3, 1)) with uniform
    intensities, then rounded through float32 exactly as the binary layout
    stores them, so a written-and-reloaded scan is bit-identical.
    """
    if spec is None:
        spec = GridSpec(
            range_min=np.array([0.0, -40.0, -3.0]),
            range_max=np.array([70.4, 40.0, 1.0]),
            cell_size=np.array([0.16, 0.16]),
        )
    rng = np.random.default_rng(seed)
    xyz = rng.uniform(spec.range_min, spec.range_max, size=(n, 3))
    inten = rng.uniform(0.0, 1.0, size=(n, 1))
    pts = np.hstack([xyz, inten]).astype("<f4").astype(np.float64)
    np.clip(pts[:, 3], 0.0, 1.0, out=pts[:, 3])
    return PointCloud(points=pts)


def crop_range(pc: PointCloud, spec: GridSpec) -> PointCloud:
    """Keep points with range_min <= p < range_max per axis, order preserved."""
    xyz = pc.xyz
    keep = (xyz >= spec.range_min).all(axis=1) & (xyz < spec.range_max).all(axis=1)
    return PointCloud(points=pc.points[keep])


def _cell_indices(xyz: np.ndarray, spec: GridSpec, naxes: int) -> np.ndarray:
    counts = spec.cell_counts("pillar" if naxes == 2 else "voxel")
    rel = (xyz[:, :naxes] - spec.range_min[:naxes]) / spec.cell_size[:naxes]
    idx = np.floor(rel).astype(np.int64)
    # the strict upper crop bound can still round up to the cell count at the
    # last ulp when the extent is an exact multiple of the cell size
    np.minimum(idx, counts - 1, out=idx)
    return idx


def discretize(pc: PointCloud, spec: GridSpec, mode: str, d: int, enc: EncoderWeights) -> FeatureGraph:
    """Group points into grid cells and encode one node per occupied cell.

    For each cell: node position is the arithmetic mean of member points and
    the node feature is the elementwise max, over members, of the descriptor
    (dx, dy, dz, intensity) mapped through enc.weight, where dx/dy/dz is the
    offset from the member to the cell centroid.  Node order is ascending
    flattened cell index (row-major, x then y then z).  "point" mode keeps one
    node per point in scan order with a zero positional offset.

    The cloud must already be cropped to the grid range; an out-of-range point
    raises with its index.  Results are invariant to input point order in the
    grid modes: members are canonically ordered by value before any summation.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if enc.d != d:
        raise ValueError(f"encoder produces {enc.d} dims but d={d} was requested")

    xyz = pc.xyz
    inten = pc.intensity
    inside = (xyz >= spec.range_min).all(axis=1) & (xyz < spec.range_max).all(axis=1)
    if not inside.all():
        bad = int(np.flatnonzero(~inside)[0])
        raise ValueError(
            f"point {bad} lies outside the grid range; crop_range the cloud first"
        )

    if mode == "point":
        desc = np.zeros((len(pc), 4), dtype=np.float64)
        desc[:, 3] = inten
        features = desc @ enc.weight
        return FeatureGraph(features=features, positions=xyz.copy())

    naxes = 2 if mode == "pillar" else 3
    if mode == "voxel" and spec.cell_size.shape[0] != 3:
        raise ValueError("voxel mode requires a 3-entry cell_size")
    counts_per_axis = spec.cell_counts(mode)
    cell = _cell_indices(xyz, spec, naxes)
    if naxes == 2:
        flat = cell[:, 0] * counts_per_axis[1] + cell[:, 1]
    else:
        flat = (cell[:, 0] * counts_per_axis[1] + cell[:, 1]) * counts_per_axis[2] + cell[:, 2]

    if len(pc) == 0:
        return FeatureGraph(
            features=np.zeros((0, d), dtype=np.float64),
            positions=np.zeros((0, 3), dtype=np.float64),
        )

    # canonical member order: cell first, then coordinate/intensity values,
    # so shuffled inputs reduce in exactly the same float order
    order = np.lexsort((inten, xyz[:, 2], xyz[:, 1], xyz[:, 0], flat))
    flat_s = flat[order]
    xyz_s = xyz[order]
    inten_s = inten[order]

    _, starts = np.unique(flat_s, return_index=True)
    member_counts = np.diff(np.append(starts, flat_s.size))
    sums = np.add.reduceat(xyz_s, starts, axis=0)
    centroids = sums / member_counts[:, None]

    desc = np.empty((flat_s.size, 4), dtype=np.float64)
    desc[:, :3] = xyz_s - np.repeat(centroids, member_counts, axis=0)
    desc[:, 3] = inten_s
    mapped = desc @ enc.weight
    features = np.maximum.reduceat(mapped, starts, axis=0)
    return FeatureGraph(features=features, positions=centroids)
