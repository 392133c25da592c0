"""Baseline downsampling strategies.

``fps`` is the exact greedy farthest point selection: starting from a seed
index it repeatedly picks the point whose minimum distance to the selected
set is largest, breaking ties by lowest index.  Distances are compared as
squared values in float64 so the scan is branch-free and deterministic.
``f_fps`` runs the same greedy loop under a fused metric
``lambda * d_xyz + d_feature``; ``random_sample`` and
``grid_centroid_sample`` are the cheap baselines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import BlockGrid
from .cloud import PointCloud
from .rng import Rng


@dataclass(frozen=True)
class SampleResult:
    """Selected source rows, in selection order."""

    indices: np.ndarray    # (m,) int64, unique
    positions: np.ndarray  # (m, 3) float64
    short_count: bool = False


def fps(cloud: PointCloud, m: int, start: int = 0) -> SampleResult:
    """Exact farthest point sampling of ``m`` points from ``cloud``."""
    n = cloud.n
    if not 1 <= m <= n:
        raise ValueError(f"m must be in [1, {n}], got {m}")
    if not 0 <= start < n:
        raise ValueError(f"start must be in [0, {n}), got {start}")
    xyz = cloud.xyz.astype(np.float64)

    selected = np.empty(m, dtype=np.int64)
    selected[0] = start
    dmin = ((xyz - xyz[start]) ** 2).sum(axis=1)
    diff = np.empty_like(xyz)
    for i in range(1, m):
        pick = int(np.argmax(dmin))  # argmax takes the lowest index on ties
        selected[i] = pick
        np.subtract(xyz, xyz[pick], out=diff)
        np.multiply(diff, diff, out=diff)
        np.minimum(dmin, diff.sum(axis=1), out=dmin)
    return SampleResult(indices=selected, positions=xyz[selected])


def fps_brute(points: np.ndarray, m: int, start: int = 0) -> np.ndarray:
    """O(n^2 * m) greedy reference.

    Builds the full pairwise squared-distance matrix and, at every step,
    re-derives each candidate's distance to the selected set from scratch
    (no incremental min array), so it shares no state with :func:`fps`.
    """
    xyz = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = xyz.shape[0]
    d2 = ((xyz[:, None, :] - xyz[None, :, :]) ** 2).sum(axis=2)
    selected = [start]
    for _ in range(1, m):
        to_set = d2[:, selected].min(axis=1)
        to_set[selected] = -np.inf
        selected.append(int(np.argmax(to_set)))
    return np.asarray(selected, dtype=np.int64)


def f_fps(
    points: np.ndarray,
    features: np.ndarray,
    m: int,
    lam: float = 1.0,
    start: int = 0,
) -> SampleResult:
    """Greedy farthest selection under ``lambda * d_xyz + d_feature``."""
    xyz = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    feat = np.asarray(features, dtype=np.float64)
    n = xyz.shape[0]
    if feat.shape[0] != n:
        raise ValueError(f"features rows {feat.shape[0]} != points rows {n}")
    if not 1 <= m <= n:
        raise ValueError(f"m must be in [1, {n}], got {m}")
    if not 0 <= start < n:
        raise ValueError(f"start must be in [0, {n}), got {start}")
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")

    selected = np.empty(m, dtype=np.int64)
    selected[0] = start
    dmin = _fused_metric(xyz, feat, start, lam)
    for i in range(1, m):
        pick = int(np.argmax(dmin))
        selected[i] = pick
        np.minimum(dmin, _fused_metric(xyz, feat, pick, lam), out=dmin)
    return SampleResult(indices=selected, positions=xyz[selected])


def _fused_metric(xyz, feat, idx, lam):
    d_xyz = np.sqrt(((xyz - xyz[idx]) ** 2).sum(axis=1))
    d_feat = np.sqrt(((feat - feat[idx]) ** 2).sum(axis=1))
    return lam * d_xyz + d_feat


def random_sample(cloud: PointCloud, m: int, rng: Rng) -> SampleResult:
    """Uniform sample without replacement: seeded shuffle, first ``m``."""
    n = cloud.n
    if m > n:
        raise ValueError(f"m must be <= {n}, got {m}")
    indices = rng.permutation(n)[:m].astype(np.int64)
    return SampleResult(indices=indices, positions=cloud.xyz[indices].astype(np.float64))


def grid_centroid_sample(grid: BlockGrid, m: int) -> SampleResult:
    """Centroids of the ``m`` most populated blocks (ties by block key)."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    # counts descending, lexicographic block key on ties; block_keys are
    # already in lexicographic order so the row index is the tiebreak
    order = np.lexsort((np.arange(grid.m), -grid.counts))
    short = m > grid.m
    chosen = order[: min(m, grid.m)]
    return SampleResult(
        indices=chosen.astype(np.int64),
        positions=grid.centroids[chosen],
        short_count=short,
    )
