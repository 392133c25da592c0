"""Centroid-instance center selection and the full sampling pipeline.

Center points come from two pools: centroids of the highest-confidence
foreground blocks (up to ``m1``, confidence descending) and raw points of
foreground blocks nearest to the coordinate origin (up to ``m2``).  A
small offset head then nudges each selected centroid toward its block's
nearest instance point to restore real surface geometry, and a second
diffusion stage enriches the selected center features.

``icfps`` chains the whole pipeline:
partition -> augment -> encode -> diffuse -> classify -> select ->
offset -> diffuse(centers).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .blocks import DEFAULT_BLOCK_SIZE, DEFAULT_S_MAX, BlockGrid, augment, partition
from .cloud import LabelSet, PointCloud, points_in_box
from .lfdbf import BlockFeatures, classify, encode_blocks, nfdm
from .nn import MlpNet
from .weights import IcfpsWeights

# (m1, m2) presets: max selected centroid points / instance points
PRESETS = {
    "s": (16384, 2048),
    "m": (26000, 4096),
    "l": (30720, 8197),
}

TAG_CENTROID = 0
TAG_INSTANCE = 1


@dataclass(frozen=True)
class CenterSet:
    """Selected center points with per-row provenance.

    Feature rows always start with the row's position.  ``source_points``
    is -1 for centroid rows; ``source_block_keys`` names the block a row
    came from (the centroid's block, or the instance point's block).
    """

    positions: np.ndarray          # (k, 3) float64
    features: np.ndarray           # (k, 3 + f) float64
    origin_tags: np.ndarray        # (k,) int8: 0 centroid, 1 instance
    source_points: np.ndarray      # (k,) int64
    source_block_keys: np.ndarray  # (k, 3) int64
    m1_eff: int
    m2_eff: int
    zero_foreground: bool = False

    @property
    def n(self) -> int:
        return int(self.positions.shape[0])

    @property
    def centroid_rows(self) -> np.ndarray:
        return np.flatnonzero(self.origin_tags == TAG_CENTROID)

    @property
    def instance_rows(self) -> np.ndarray:
        return np.flatnonzero(self.origin_tags == TAG_INSTANCE)

    def meta_dict(self) -> dict:
        return {
            "m1_eff": self.m1_eff,
            "m2_eff": self.m2_eff,
            "zero_foreground": self.zero_foreground,
            "origin_tags": ["centroid" if t == TAG_CENTROID else "instance"
                            for t in self.origin_tags],
            "source_points": [int(v) for v in self.source_points],
            "source_block_keys": [[int(v) for v in key]
                                  for key in self.source_block_keys],
        }


def empty_center_set(feature_width: int, zero_foreground: bool = False) -> CenterSet:
    return CenterSet(
        positions=np.empty((0, 3), dtype=np.float64),
        features=np.empty((0, feature_width), dtype=np.float64),
        origin_tags=np.empty(0, dtype=np.int8),
        source_points=np.empty(0, dtype=np.int64),
        source_block_keys=np.empty((0, 3), dtype=np.int64),
        m1_eff=0,
        m2_eff=0,
        zero_foreground=zero_foreground,
    )


def ciss_select(
    grid: BlockGrid, bf: BlockFeatures, cloud: PointCloud, m1: int, m2: int
) -> CenterSet:
    """Select top-confidence centroids and nearest-to-origin foreground points.

    Centroid candidates are foreground blocks ordered by confidence
    descending (ties by block key); instance candidates are every member
    point of a foreground block carrying its block's feature, ordered by
    distance to the origin ascending (ties by point index).
    """
    if bf.m != grid.m:
        raise ValueError(f"block features ({bf.m}) do not match grid ({grid.m})")
    if m1 < 0 or m2 < 0:
        raise ValueError(f"m1 and m2 must be >= 0, got {m1}, {m2}")
    fg = bf.foreground_mask
    width = 3 + (bf.features.shape[1] if bf.features.ndim == 2 else 0)
    if not fg.any():
        return empty_center_set(width, zero_foreground=True)

    fg_rows = np.flatnonzero(fg)
    # confidence descending; block rows are already in lexicographic key order
    order = np.lexsort((fg_rows, -bf.confidences[fg_rows]))
    sel_blocks = fg_rows[order][:m1]
    ctr_pos = grid.centroids[sel_blocks]
    ctr_feat = np.concatenate([ctr_pos, bf.features[sel_blocks]], axis=1)

    point_mask = fg[grid.block_of_point]
    cand_pts = np.flatnonzero(point_mask)
    xyz = cloud.xyz[cand_pts].astype(np.float64)
    dist = np.sqrt((xyz**2).sum(axis=1))
    iorder = np.lexsort((cand_pts, dist))
    sel_pts = cand_pts[iorder][:m2]
    ins_pos = cloud.xyz[sel_pts].astype(np.float64)
    ins_feat = np.concatenate(
        [ins_pos, bf.features[grid.block_of_point[sel_pts]]], axis=1
    )

    m1_eff, m2_eff = sel_blocks.shape[0], sel_pts.shape[0]
    return CenterSet(
        positions=np.concatenate([ctr_pos, ins_pos], axis=0),
        features=np.concatenate([ctr_feat, ins_feat], axis=0),
        origin_tags=np.concatenate(
            [np.full(m1_eff, TAG_CENTROID, dtype=np.int8),
             np.full(m2_eff, TAG_INSTANCE, dtype=np.int8)]
        ),
        source_points=np.concatenate(
            [np.full(m1_eff, -1, dtype=np.int64), sel_pts.astype(np.int64)]
        ),
        source_block_keys=np.concatenate(
            [grid.block_keys[sel_blocks],
             grid.block_keys[grid.block_of_point[sel_pts]]], axis=0
        ),
        m1_eff=m1_eff,
        m2_eff=m2_eff,
    )


def offset_targets(
    grid: BlockGrid, bf: BlockFeatures, cloud: PointCloud, labels: LabelSet
) -> tuple[np.ndarray, np.ndarray]:
    """Regression targets for foreground-block centroids.

    For every foreground block (mask order): the offset from its centroid
    to the nearest labelled-foreground member point (ties by lowest point
    index), and whether the centroid itself sits inside any ground-truth
    box.  Blocks with no labelled member get a zero target and are
    excluded via the flag.
    """
    rows = np.flatnonzero(bf.foreground_mask)
    return offset_targets_for_rows(grid, rows, cloud, labels)


def offset_targets_for_rows(
    grid: BlockGrid, rows: np.ndarray, cloud: PointCloud, labels: LabelSet
) -> tuple[np.ndarray, np.ndarray]:
    if labels.n != cloud.n:
        raise ValueError("labels do not match cloud length")
    k = rows.shape[0]
    targets = np.zeros((k, 3), dtype=np.float64)
    has_member = np.zeros(k, dtype=bool)
    if k == 0:
        return targets, has_member

    slot_of_block = np.full(grid.m, -1, dtype=np.int64)
    slot_of_block[rows] = np.arange(k)

    pt_mask = (slot_of_block[grid.block_of_point] >= 0) & labels.foreground_mask()
    pts = np.flatnonzero(pt_mask)
    if pts.size:
        brow = grid.block_of_point[pts]
        pos = cloud.xyz[pts].astype(np.float64)
        d2 = ((pos - grid.centroids[brow]) ** 2).sum(axis=1)
        order = np.lexsort((pts, d2, brow))
        uniq, first = np.unique(brow[order], return_index=True)
        nearest = pts[order][first]
        slots = slot_of_block[uniq]
        targets[slots] = cloud.xyz[nearest].astype(np.float64) - grid.centroids[uniq]
        has_member[slots] = True

    inside = np.zeros(k, dtype=bool)
    centroids = grid.centroids[rows]
    for box in labels.boxes:
        inside |= points_in_box(centroids, box)
    return targets, inside & has_member


def offset_loss(
    predicted: np.ndarray, targets: np.ndarray, in_box: np.ndarray
) -> tuple[float, np.ndarray]:
    """Smooth-L1 centroid offset loss over in-box rows, with gradient.

    Per kept row the three residual components each contribute
    ``0.5 x^2`` for |x| < 1 and ``|x| - 0.5`` otherwise; the loss is the
    mean over kept rows.  Excluded rows contribute nothing and receive a
    zero gradient.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    in_box = np.asarray(in_box, dtype=bool)
    if predicted.shape != targets.shape or predicted.shape[:1] != in_box.shape:
        raise ValueError(
            f"shape mismatch: pred {predicted.shape}, targets {targets.shape}, "
            f"in_box {in_box.shape}"
        )
    grad = np.zeros_like(predicted)
    kept = int(in_box.sum())
    if kept == 0:
        return 0.0, grad
    residual = predicted[in_box] - targets[in_box]
    absr = np.abs(residual)
    small = absr < 1.0
    elementwise = np.where(small, 0.5 * residual**2, absr - 0.5)
    loss = float(elementwise.sum() / kept)
    grad[in_box] = np.where(small, residual, np.sign(residual)) / kept
    return loss, grad


def apply_offsets(centers: CenterSet, head: MlpNet) -> CenterSet:
    """Move centroid rows by the head's predicted offset; instances untouched."""
    if head.in_width != centers.features.shape[1]:
        raise ValueError(
            f"offset head expects width {head.in_width}, features have "
            f"{centers.features.shape[1]}"
        )
    rows = centers.centroid_rows
    if rows.size == 0:
        return centers
    deltas = head.forward(centers.features[rows])
    return apply_offset_vectors(centers, deltas)


def apply_offset_vectors(centers: CenterSet, deltas: np.ndarray) -> CenterSet:
    """Move centroid rows by explicit per-row offset vectors."""
    rows = centers.centroid_rows
    deltas = np.asarray(deltas, dtype=np.float64)
    if deltas.shape != (rows.shape[0], 3):
        raise ValueError(f"expected {(rows.shape[0], 3)} offsets, got {deltas.shape}")
    positions = centers.positions.copy()
    features = centers.features.copy()
    positions[rows] += deltas
    features[rows, :3] = positions[rows]
    return replace(centers, positions=positions, features=features)


def icfps(
    cloud: PointCloud,
    weights: IcfpsWeights,
    m1: int,
    m2: int,
    labels: LabelSet | None = None,
    block_size=DEFAULT_BLOCK_SIZE,
    s_max: int = DEFAULT_S_MAX,
) -> CenterSet:
    """Full sampling pipeline; labels are accepted for API parity only.

    Output features are ``[position, diffused center feature]``; on a
    scene with no foreground blocks the result is empty and flagged so
    callers can fall back to plain farthest point sampling explicitly.
    """
    del labels
    grid = partition(cloud, block_size=block_size, s_max=s_max)
    if grid.m == 0:
        return empty_center_set(3 + weights.c1, zero_foreground=True)
    aug = augment(grid, cloud)
    base = encode_blocks(aug, weights.encoder)
    diffused = nfdm(grid.centroids, base, weights.nfdm1)
    bf = classify(diffused, weights.head, weights.alpha)
    centers = ciss_select(grid, bf, cloud, m1, m2)
    if centers.zero_foreground:
        return centers
    centers = apply_offsets(centers, weights.offset)
    enriched = nfdm(centers.positions, centers.features, weights.nfdm2)
    return replace(
        centers,
        features=np.concatenate([centers.positions, enriched], axis=1),
    )


def icfps_preset(
    cloud: PointCloud,
    weights: IcfpsWeights,
    preset: str,
    labels: LabelSet | None = None,
    **kwargs,
) -> CenterSet:
    """icfps with one of the named (m1, m2) presets."""
    try:
        m1, m2 = PRESETS[preset.lower()]
    except KeyError:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    return icfps(cloud, weights, m1, m2, labels=labels, **kwargs)
