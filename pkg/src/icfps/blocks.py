"""Axis-aligned block partition and spatial-hash radius search.

The block grid assigns every point to exactly one cell via
``floor((p - origin) / block_size)``, keeps full per-block member lists
(ascending point index), and computes per-block centroids over the first
``s_max`` members.  Occupancy counts always reflect the full membership so
density weighting sees true block population even when features are
computed from a truncated subset.

``ball_query`` is an exact radius search over a uniform hash grid whose
cell edge equals the query radius, probing the 27 surrounding cells.  Per
center it returns all targets within the radius, truncated to the
``max_k`` nearest with ties broken by ascending target index, so results
never depend on evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud

DEFAULT_BLOCK_SIZE = (0.075, 0.075, 1.0)
DEFAULT_S_MAX = 32

_CENTER_CHUNK = 65536


@dataclass(frozen=True)
class BlockGrid:
    """Partition of a cloud into occupied axis-aligned blocks.

    ``block_keys`` are sorted lexicographically. ``counts`` is the full
    member count per block; features and centroids use only the first
    ``s_max`` members (ascending point index).
    """

    block_size: np.ndarray          # (3,) float64, meters
    origin: np.ndarray              # (3,) float64, meters
    block_keys: np.ndarray          # (m, 3) int64
    centroids: np.ndarray           # (m, 3) float64, mean of retained members
    counts: np.ndarray              # (m,) int64, full occupancy N_v
    s_max: int
    point_order: np.ndarray         # (n,) int64, point indices grouped by block
    starts: np.ndarray              # (m + 1,) int64 offsets into point_order
    block_of_point: np.ndarray      # (n,) int64, block row of each point

    @property
    def m(self) -> int:
        return int(self.block_keys.shape[0])

    @property
    def n_points(self) -> int:
        return int(self.point_order.shape[0])

    @property
    def retained_counts(self) -> np.ndarray:
        return np.minimum(self.counts, self.s_max)

    @property
    def overflow_counts(self) -> np.ndarray:
        return np.maximum(self.counts - self.s_max, 0)

    def point_list(self, i: int) -> np.ndarray:
        """Full ascending point-index list of block ``i``."""
        return self.point_order[self.starts[i]: self.starts[i + 1]]

    def retained_list(self, i: int) -> np.ndarray:
        """First ``s_max`` member indices of block ``i``."""
        lo = self.starts[i]
        return self.point_order[lo: lo + min(int(self.counts[i]), self.s_max)]

    def retained_rows(self) -> tuple[np.ndarray, np.ndarray]:
        """Indices of all retained points and their block rows, block order."""
        kept = np.minimum(self.counts, self.s_max)
        total = int(kept.sum())
        within = np.arange(total) - np.repeat(np.cumsum(kept) - kept, kept)
        rows = np.repeat(self.starts[:-1], kept) + within
        return self.point_order[rows], np.repeat(np.arange(self.m), kept)

    def geometric_centers(self) -> np.ndarray:
        """Center of each block cell: ``origin + (key + 0.5) * block_size``."""
        return self.origin + (self.block_keys.astype(np.float64) + 0.5) * self.block_size

    def to_debug_dict(self) -> dict:
        return {
            "m": self.m,
            "block_size": self.block_size.tolist(),
            "origin": self.origin.tolist(),
            "block_keys": self.block_keys.tolist(),
            "counts": self.counts.tolist(),
            "centroids": self.centroids.tolist(),
            "s_max": self.s_max,
        }


@dataclass(frozen=True)
class AugmentedBlockMatrix:
    """Padded per-block point features of shape (m, s, c + 6).

    For each valid slot the first ``c`` channels are the raw point
    channels, channels ``[c, c+3)`` the offset from the block centroid and
    channels ``[c+3, c+6)`` the offset from the block geometric center.
    Padded slots are zero with ``valid_mask`` false.
    """

    values: np.ndarray      # (m, s, c + 6) float32
    valid_mask: np.ndarray  # (m, s) bool
    c: int


def partition(
    cloud: PointCloud,
    block_size=DEFAULT_BLOCK_SIZE,
    s_max: int = DEFAULT_S_MAX,
    origin=None,
) -> BlockGrid:
    """Partition ``cloud`` into occupied blocks.

    ``origin`` defaults to the per-axis coordinate minimum snapped down to
    a block multiple.  ``s_max`` bounds the members retained for feature
    computation; surplus members stay in the block list and in ``counts``.
    """
    bs = np.asarray(block_size, dtype=np.float64)
    if bs.shape != (3,) or (bs <= 0).any():
        raise ValueError(f"block_size must be 3 positive extents, got {block_size}")
    if s_max < 1:
        raise ValueError(f"s_max must be >= 1, got {s_max}")

    xyz = cloud.xyz.astype(np.float64)
    n = cloud.n
    if n == 0:
        org = np.zeros(3) if origin is None else np.asarray(origin, dtype=np.float64)
        return BlockGrid(
            block_size=bs,
            origin=org,
            block_keys=np.empty((0, 3), dtype=np.int64),
            centroids=np.empty((0, 3), dtype=np.float64),
            counts=np.empty(0, dtype=np.int64),
            s_max=int(s_max),
            point_order=np.empty(0, dtype=np.int64),
            starts=np.zeros(1, dtype=np.int64),
            block_of_point=np.empty(0, dtype=np.int64),
        )

    if origin is None:
        org = np.floor(xyz.min(axis=0) / bs) * bs
    else:
        org = np.asarray(origin, dtype=np.float64)
        if org.shape != (3,):
            raise ValueError("origin must have 3 components")

    keys = np.floor((xyz - org) / bs).astype(np.int64)

    # row-major encoding of (possibly negative) keys; ascending code order
    # equals lexicographic key order
    kmin = keys.min(axis=0)
    shifted = keys - kmin
    dims = shifted.max(axis=0).astype(np.int64) + 1
    code = (shifted[:, 0] * dims[1] + shifted[:, 1]) * dims[2] + shifted[:, 2]

    order = np.argsort(code, kind="stable")       # stable keeps ascending index
    sorted_code = code[order]
    unique_code, first, counts = np.unique(
        sorted_code, return_index=True, return_counts=True
    )
    m = unique_code.shape[0]
    starts = np.concatenate([first, [n]]).astype(np.int64)

    block_of_point = np.empty(n, dtype=np.int64)
    block_of_point[order] = np.repeat(np.arange(m), counts)

    block_keys = keys[order[first]]

    kept = np.minimum(counts, s_max)
    within = np.arange(int(kept.sum())) - np.repeat(np.cumsum(kept) - kept, kept)
    retained_rows = np.repeat(starts[:-1], kept) + within
    retained_pts = xyz[order[retained_rows]]
    sums = np.add.reduceat(retained_pts, np.cumsum(kept) - kept, axis=0)
    centroids = sums / kept[:, None]

    return BlockGrid(
        block_size=bs,
        origin=org,
        block_keys=block_keys,
        centroids=centroids,
        counts=counts.astype(np.int64),
        s_max=int(s_max),
        point_order=order.astype(np.int64),
        starts=starts,
        block_of_point=block_of_point,
    )


def augment(grid: BlockGrid, cloud: PointCloud) -> AugmentedBlockMatrix:
    """Build the padded (m, s, c+6) per-block feature tensor for ``grid``."""
    c = cloud.c
    s = grid.s_max
    m = grid.m
    values = np.zeros((m, s, c + 6), dtype=np.float32)
    mask = np.zeros((m, s), dtype=bool)
    if m == 0:
        return AugmentedBlockMatrix(values=values, valid_mask=mask, c=c)

    rows, slots, point_idx, block_idx = _retained_slots(grid)
    values[rows, slots] = augmented_point_rows(grid, cloud, point_idx, block_idx)
    mask[rows, slots] = True
    return AugmentedBlockMatrix(values=values, valid_mask=mask, c=c)


def augmented_point_rows(
    grid: BlockGrid, cloud: PointCloud, point_idx: np.ndarray, block_idx: np.ndarray
) -> np.ndarray:
    """Augmented feature rows [channels, p - centroid, p - cell center]."""
    pts64 = cloud.points[point_idx].astype(np.float64)
    out = np.empty((point_idx.shape[0], cloud.c + 6), dtype=np.float32)
    out[:, : cloud.c] = cloud.points[point_idx]
    out[:, cloud.c: cloud.c + 3] = pts64[:, :3] - grid.centroids[block_idx]
    centers = grid.geometric_centers()[block_idx]
    out[:, cloud.c + 3: cloud.c + 6] = pts64[:, :3] - centers
    return out


def _retained_slots(grid: BlockGrid):
    kept = grid.retained_counts
    slot = np.arange(int(kept.sum())) - np.repeat(np.cumsum(kept) - kept, kept)
    rows = np.repeat(np.arange(grid.m), kept)
    point_idx, block_idx = grid.retained_rows()
    return rows, slot, point_idx, block_idx


# ---------------------------------------------------------------------------
# ball query
# ---------------------------------------------------------------------------


def ball_query(
    centers: np.ndarray, targets: np.ndarray, radius: float, max_k: int
) -> list[np.ndarray]:
    """Exact radius neighbors per center over a uniform hash grid.

    Returns, for each center, the indices of all targets within ``radius``
    (Euclidean, inclusive), truncated to the ``max_k`` nearest, ordered by
    (distance, target index).
    """
    flat, offsets = ball_query_pairs(centers, targets, radius, max_k)
    return [flat[offsets[i]: offsets[i + 1]] for i in range(offsets.shape[0] - 1)]


def ball_query_pairs(
    centers: np.ndarray, targets: np.ndarray, radius: float, max_k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Flat form of :func:`ball_query`: neighbor indices plus center offsets."""
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if max_k < 1:
        raise ValueError(f"max_k must be >= 1, got {max_k}")
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    k = centers.shape[0]
    if targets.shape[0] == 0 or k == 0:
        return np.empty(0, dtype=np.int64), np.zeros(k + 1, dtype=np.int64)

    r = float(radius)
    r2 = r * r
    t_cell = np.floor(targets / r).astype(np.int64)
    cmin = t_cell.min(axis=0)
    t_cell -= cmin
    dims = t_cell.max(axis=0) + 1
    t_code = (t_cell[:, 0] * dims[1] + t_cell[:, 1]) * dims[2] + t_cell[:, 2]
    t_order = np.argsort(t_code, kind="stable")
    sorted_code = t_code[t_order]
    bucket_codes, bucket_first, bucket_counts = np.unique(
        sorted_code, return_index=True, return_counts=True
    )

    c_cell = np.floor(centers / r).astype(np.int64) - cmin

    probes = np.array(
        [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)],
        dtype=np.int64,
    )

    counts_out = np.zeros(k, dtype=np.int64)
    flat_parts = []
    for lo in range(0, k, _CENTER_CHUNK):
        hi = min(lo + _CENTER_CHUNK, k)
        nbr, cnt = _query_chunk(
            centers[lo:hi], c_cell[lo:hi], targets, t_order,
            bucket_codes, bucket_first, bucket_counts, dims, probes, r2, max_k,
        )
        flat_parts.append(nbr)
        counts_out[lo:hi] = cnt

    offsets = np.zeros(k + 1, dtype=np.int64)
    np.cumsum(counts_out, out=offsets[1:])
    flat = np.concatenate(flat_parts) if flat_parts else np.empty(0, dtype=np.int64)
    return flat, offsets


def _query_chunk(
    centers, c_cell, targets, t_order,
    bucket_codes, bucket_first, bucket_counts, dims, probes, r2, max_k,
):
    nc = centers.shape[0]
    # candidate bucket ranges for the 27-cell probe around each center
    cells = c_cell[:, None, :] + probes[None, :, :]      # (nc, 27, 3)
    in_range = ((cells >= 0) & (cells < dims)).all(axis=2)
    codes = (cells[:, :, 0] * dims[1] + cells[:, :, 1]) * dims[2] + cells[:, :, 2]
    pos = np.searchsorted(bucket_codes, codes)
    pos_clipped = np.minimum(pos, bucket_codes.shape[0] - 1)
    hit = in_range & (bucket_codes[pos_clipped] == codes)
    starts = np.where(hit, bucket_first[pos_clipped], 0)
    lens = np.where(hit, bucket_counts[pos_clipped], 0)

    flat_lens = lens.ravel()
    total = int(flat_lens.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64), np.zeros(nc, dtype=np.int64)

    ends = np.cumsum(flat_lens)
    within = np.arange(total) - np.repeat(ends - flat_lens, flat_lens)
    cand_pos = np.repeat(starts.ravel(), flat_lens) + within
    cand_center = np.repeat(np.arange(nc * probes.shape[0]) // probes.shape[0], flat_lens)
    cand_target = t_order[cand_pos]

    diff = targets[cand_target] - centers[cand_center]
    d2 = diff[:, 0] ** 2 + diff[:, 1] ** 2 + diff[:, 2] ** 2
    keep = d2 <= r2
    cand_center = cand_center[keep]
    cand_target = cand_target[keep]
    d2 = d2[keep]

    # order by (center, distance, target index), then keep max_k per center
    order = np.lexsort((cand_target, d2, cand_center))
    cand_center = cand_center[order]
    cand_target = cand_target[order]
    per_center = np.bincount(cand_center, minlength=nc)
    group_start = np.cumsum(per_center) - per_center
    rank = np.arange(cand_center.shape[0]) - group_start[cand_center]
    keep = rank < max_k
    return cand_target[keep], np.bincount(cand_center[keep], minlength=nc)


def nearest_within_radius(
    centers: np.ndarray, targets: np.ndarray, radius: float, max_k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Ball query with multipass radius refinement.

    Result-identical to ``ball_query_pairs(centers, targets, radius,
    max_k)`` but resolves dense regions with much smaller probe radii: a
    center whose count within a sub-radius already reaches ``max_k`` has
    its nearest ``max_k`` entirely inside that sub-ball, so only sparse
    stragglers pay for the full-radius probe.
    """
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    n = centers.shape[0]
    if n == 0 or targets.shape[0] == 0:
        return np.empty(0, dtype=np.int64), np.zeros(n + 1, dtype=np.int64)
    parts: list[np.ndarray | None] = [None] * n
    counts = np.zeros(n, dtype=np.int64)
    pending = np.arange(n)
    for sub in (radius / 8.0, radius / 4.0, radius / 2.0, radius):
        flat, offsets = ball_query_pairs(centers[pending], targets, sub, max_k)
        got = np.diff(offsets)
        resolved = (got >= max_k) | (sub == radius)
        for local in np.flatnonzero(resolved):
            row = pending[local]
            parts[row] = flat[offsets[local]: offsets[local + 1]]
            counts[row] = got[local]
        pending = pending[~resolved]
        if pending.size == 0:
            break
    out_offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=out_offsets[1:])
    return np.concatenate(parts), out_offsets


def ball_query_brute(
    centers: np.ndarray, targets: np.ndarray, radius: float, max_k: int
) -> list[np.ndarray]:
    """O(k*t) reference scan with the same truncation rule as ball_query."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    r2 = float(radius) * float(radius)
    out = []
    for c in centers:
        diff = targets - c
        d2 = diff[:, 0] ** 2 + diff[:, 1] ** 2 + diff[:, 2] ** 2
        idx = np.flatnonzero(d2 <= r2)
        order = np.lexsort((idx, d2[idx]))
        out.append(idx[order][:max_k].astype(np.int64))
    return out
