"""End-to-end training of the background filter on labelled scenes.

Each scene becomes one full-batch gradient step per epoch: encode block
points, pool, diffuse, classify, then minimize the mean per-block
density-distance focal loss (block label = contains at least one
foreground point).  The centroid offset head trains jointly on
true-foreground blocks with the smooth-L1 offset loss.  Training is plain
SGD in float64 and is deterministic for a fixed seed: scene order, split,
and initialization never depend on timing or thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import DEFAULT_BLOCK_SIZE, DEFAULT_S_MAX, augmented_point_rows, partition
from .ciss import offset_loss, offset_targets_for_rows
from .cloud import LabelSet, PointCloud
from .lfdbf import (
    DEFAULT_ALPHA,
    DdflParams,
    _NeighborCache,
    _segment_max,
    _segment_max_backward,
    build_neighbor_caches,
    focal_term,
    m_den,
    m_dis,
    nfdm_backward,
    nfdm_forward,
)
from .rng import Rng
from .synth import far_instance_block_mask, foreground_block_mask
from .weights import IcfpsWeights


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 16
    lr: float = 0.4
    val_fraction: float = 0.2
    use_ddfl_weights: bool = True
    mu: float = 0.5
    sigma: float = 0.5
    gamma: float = 2.0
    alpha: float = DEFAULT_ALPHA
    block_size: tuple = DEFAULT_BLOCK_SIZE
    s_max: int = DEFAULT_S_MAX
    prior_confidence: float = 0.2   # head bias init, standard focal-loss prior
    train_offset_head: bool = True  # second phase, trunk frozen
    offset_epochs: int = 30
    offset_lr: float = 0.05
    steps_per_scene: int = 1
    head_steps_per_scene: int = 30  # cheap head-only updates per scene step
    head_lr_scale: float = 3.0
    # mean-normalize focal weights per scene so plain-SGD step sizes match
    # an unweighted run (adaptive optimizers are scale-free; plain SGD not)
    normalize_weight_scale: bool = True
    target_recall: float | None = None      # early stop once both targets hold
    target_rejection: float | None = None
    min_epochs: int = 1


@dataclass
class _SceneState:
    x_rows: np.ndarray           # (K, c+6) float64 encoder inputs
    block_starts: np.ndarray     # (m+1,)
    block_seg: np.ndarray        # (K,) block row per encoder input row
    centroids: np.ndarray        # (m, 3)
    y: np.ndarray                # (m,) block foreground labels
    w: np.ndarray                # (m,) focal weights
    caches: list[_NeighborCache]
    fg_rows: np.ndarray          # true-foreground block rows
    off_targets: np.ndarray
    off_inbox: np.ndarray
    far_mask: np.ndarray


def train_lfdbf(
    scenes: list[tuple[PointCloud, LabelSet]],
    hyper: TrainConfig,
    rng: Rng,
) -> tuple[IcfpsWeights, list[dict]]:
    """Train filter nets on labelled scenes; returns (weights, history).

    ``history`` holds one record per epoch with the mean train loss and
    the foreground-block recall / background-block rejection (and far
    recall, when far instances exist) on the held-out tail of ``scenes``.
    """
    if not scenes:
        raise ValueError("scene list is empty")
    for i, (cloud, labels) in enumerate(scenes):
        if labels is None or labels.n != cloud.n:
            raise ValueError(f"scene {i} has no matching labels")

    weights = IcfpsWeights.init(rng, c=scenes[0][0].c, alpha=hyper.alpha)
    states = [_prepare_scene(cloud, labels, weights, hyper) for cloud, labels in scenes]
    _fold_input_scales(weights, states)
    if hyper.prior_confidence is not None:
        p = float(np.clip(hyper.prior_confidence, 1e-4, 1 - 1e-4))
        weights.head.layers[-1].b[:] = np.log(p / (1.0 - p))

    n_val = int(round(hyper.val_fraction * len(states)))
    n_val = min(n_val, len(states) - 1) if len(states) > 1 else 0
    train_states = states[: len(states) - n_val]
    val_states = states[len(states) - n_val:] or train_states

    history: list[dict] = []
    for epoch in range(hyper.epochs):
        losses = []
        for st in train_states:
            for _ in range(hyper.steps_per_scene):
                losses.append(_train_step(weights, st, hyper))
        record = _evaluate_epoch(weights, val_states, hyper)
        record["epoch"] = epoch
        record["train_loss"] = float(np.mean(losses)) if losses else 0.0
        history.append(record)
        if _targets_met(record, hyper) and epoch + 1 >= hyper.min_epochs:
            break
    if hyper.train_offset_head:
        _train_offset_phase(weights, train_states, hyper)
    return weights, history


def _fold_input_scales(weights: IcfpsWeights, states: list["_SceneState"]) -> None:
    """Fold per-channel input standardization into first-layer weights.

    Raw block rows mix meter-scale coordinates with sub-block offsets;
    without normalization the coordinate channels dominate every random
    projection and gradient descent cannot surface the geometric signal.
    Standardizing is an affine reparameterization, so it folds exactly
    into the first affine layer and the nets keep their plain form.
    """
    rows = np.concatenate([st.x_rows for st in states]).astype(np.float64)
    mean = rows.mean(axis=0)
    std = np.maximum(rows.std(axis=0), 1e-6)
    _fold_layer(weights.encoder, mean, std)

    # diffusion encoders see [block feature, relative offset, distance];
    # normalize only the geometric tail by the query radius
    d = weights.c1
    for enc, radius in zip(weights.nfdm1.encoders, weights.nfdm1.radii):
        geo_mean = np.zeros(enc.in_width)
        geo_std = np.ones(enc.in_width)
        geo_std[d:] = radius
        _fold_layer(enc, geo_mean, geo_std)

    # offset head sees [centroid xyz, block feature]
    cent = np.concatenate([st.centroids for st in states])
    off_mean = np.zeros(weights.offset.in_width)
    off_std = np.ones(weights.offset.in_width)
    off_mean[:3] = cent.mean(axis=0)
    off_std[:3] = np.maximum(cent.std(axis=0), 1e-6)
    _fold_layer(weights.offset, off_mean, off_std)


def _fold_layer(net, mean: np.ndarray, std: np.ndarray) -> None:
    layer = net.layers[0]
    layer.b -= layer.w @ (mean / std)
    layer.w /= std


def _targets_met(record: dict, hyper: TrainConfig) -> bool:
    if hyper.target_recall is None or hyper.target_rejection is None:
        return False
    return (
        record["val_recall"] >= hyper.target_recall
        and record["val_rejection"] >= hyper.target_rejection
    )


def _prepare_scene(
    cloud: PointCloud, labels: LabelSet, weights: IcfpsWeights, hyper: TrainConfig
) -> _SceneState:
    grid = partition(cloud, block_size=hyper.block_size, s_max=hyper.s_max)
    if grid.m == 0:
        raise ValueError("cannot train on an empty scene")
    point_idx, block_idx = grid.retained_rows()
    x_rows = augmented_point_rows(grid, cloud, point_idx, block_idx).astype(np.float64)
    kept = grid.retained_counts
    block_starts = np.concatenate([[0], np.cumsum(kept)]).astype(np.int64)

    y = foreground_block_mask(grid, labels).astype(np.float64)

    if hyper.use_ddfl_weights:
        dist = np.sqrt((grid.centroids**2).sum(axis=1))
        params = DdflParams(
            mu=hyper.mu,
            sigma=hyper.sigma,
            gamma=hyper.gamma,
            n_max=max(int(grid.counts.max()), 1),
            m_d=max(float(dist.max()), 1e-9),
        )
        w = m_den(grid.counts, params) * m_dis(dist, params)
        if hyper.normalize_weight_scale:
            w = w / w.mean()
    else:
        w = np.ones(grid.m, dtype=np.float64)

    caches = build_neighbor_caches(grid.centroids, weights.nfdm1)
    fg_rows = np.flatnonzero(y > 0)
    off_targets, off_inbox = offset_targets_for_rows(grid, fg_rows, cloud, labels)
    far_mask = far_instance_block_mask(grid, cloud, labels)
    return _SceneState(
        x_rows=x_rows,
        block_starts=block_starts,
        block_seg=block_idx,
        centroids=grid.centroids,
        y=y,
        w=w,
        caches=caches,
        fg_rows=fg_rows,
        off_targets=off_targets,
        off_inbox=off_inbox,
        far_mask=far_mask,
    )


def _scene_forward(weights: IcfpsWeights, st: _SceneState, want_backward: bool = False):
    h_pts = weights.encoder.forward(st.x_rows)
    f_blocks, first_pts = _segment_max(
        h_pts, st.block_starts, st.block_seg, want_argmax=want_backward
    )
    f_out, state = nfdm_forward(
        weights.nfdm1, f_blocks, st.caches, want_backward=want_backward
    )
    conf = weights.head.forward(f_out).ravel()
    return h_pts, f_blocks, first_pts, f_out, state, conf


def _train_step(weights: IcfpsWeights, st: _SceneState, hyper: TrainConfig) -> float:
    h_pts, f_blocks, first_pts, f_out, state, conf = _scene_forward(
        weights, st, want_backward=True
    )
    m = conf.shape[0]

    losses, d_conf = focal_term(conf, st.y, hyper.gamma, st.w)
    loss = float(losses.mean())
    d_conf = d_conf / m

    head_grads, d_fout = weights.head.backward(d_conf[:, None])
    d_fblocks, out_grads, scale_grads = nfdm_backward(
        weights.nfdm1, d_fout, f_blocks, st.caches, state
    )
    d_hpts = _segment_max_backward(d_fblocks, first_pts, h_pts.shape[0])
    enc_grads, _ = weights.encoder.backward(d_hpts)

    lr = hyper.lr
    weights.encoder.sgd_step(enc_grads, lr)
    for enc, grads in zip(weights.nfdm1.encoders, scale_grads):
        enc.sgd_step(grads, lr)
    weights.nfdm1.output.sgd_step(out_grads, lr)
    weights.head.sgd_step(head_grads, lr)

    # extra head-only refinements on the fresh features are nearly free and
    # close the logit-scale gap far faster than full trunk steps
    head_lr = hyper.lr * hyper.head_lr_scale
    for _ in range(hyper.head_steps_per_scene):
        conf = weights.head.forward(f_out).ravel()
        _, d_conf = focal_term(conf, st.y, hyper.gamma, st.w)
        head_grads, _ = weights.head.backward((d_conf / m)[:, None])
        weights.head.sgd_step(head_grads, head_lr)
    return loss


def _train_offset_phase(
    weights: IcfpsWeights, states: list[_SceneState], hyper: TrainConfig
) -> None:
    """Fit the centroid offset head on frozen trunk features.

    Joint training would let the regression gradient (averaged over a few
    dozen foreground blocks) drown the classification gradient (averaged
    over every block) inside the shared trunk, so the head trains alone
    against fixed features after the classifier has converged.
    """
    batches = []
    for st in states:
        if st.fg_rows.size == 0 or not st.off_inbox.any():
            continue
        f_out = _scene_forward(weights, st)[3]
        x_off = np.concatenate([st.centroids[st.fg_rows], f_out[st.fg_rows]], axis=1)
        batches.append((x_off, st.off_targets, st.off_inbox))
    if not batches:
        return
    for _ in range(hyper.offset_epochs):
        for x_off, targets, inbox in batches:
            pred = weights.offset.forward(x_off)
            _, d_pred = offset_loss(pred, targets, inbox)
            grads, _ = weights.offset.backward(d_pred)
            weights.offset.sgd_step(grads, hyper.offset_lr)


def _evaluate_epoch(
    weights: IcfpsWeights, states: list[_SceneState], hyper: TrainConfig
) -> dict:
    tp = fn = tn = fp = 0
    far_tp = far_total = 0
    for st in states:
        conf = _scene_forward(weights, st)[-1]
        pred = conf > hyper.alpha
        truth = st.y > 0
        tp += int(np.count_nonzero(pred & truth))
        fn += int(np.count_nonzero(~pred & truth))
        tn += int(np.count_nonzero(~pred & ~truth))
        fp += int(np.count_nonzero(pred & ~truth))
        far_total += int(np.count_nonzero(st.far_mask))
        far_tp += int(np.count_nonzero(pred & st.far_mask))
    return {
        "val_recall": tp / (tp + fn) if tp + fn else 1.0,
        "val_rejection": tn / (tn + fp) if tn + fp else 1.0,
        "val_far_recall": far_tp / far_total if far_total else None,
    }
