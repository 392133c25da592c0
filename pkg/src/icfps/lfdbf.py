"""Background-point filtering: block encoding, neighborhood feature
diffusion, confidence classification, and the density-distance focal loss.

The filter encodes each occupied block with a small per-point MLP pooled
by max, diffuses features between nearby blocks (multi-scale ball query,
max aggregation over an encoded [feature, offset, distance] vector), and
scores each block with a sigmoid head.  Blocks scoring above the
confidence threshold are treated as foreground.

The focal loss is weighted per block by a Gaussian density term
``m_den = exp(-((n_v/n_max - mu)^2) / (2 sigma^2))`` and an exponential
distance term ``m_dis = exp(d / m_d) / e`` so that sparse, distant blocks
are not drowned out by dense nearby ground.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .blocks import DEFAULT_S_MAX, AugmentedBlockMatrix
from .nn import MlpNet

DEFAULT_ALPHA = 0.45
DEFAULT_C1 = 32
CONFIDENCE_CLAMP = 1e-7


# ---------------------------------------------------------------------------
# loss kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DdflParams:
    """Focal-loss weighting parameters.

    ``sigma`` doubles as the Gaussian scale in both the density weight's
    numerator normalisation and its exponent; ``n_max`` is the maximum
    block occupancy in scope and ``m_d`` the maximum block distance.
    """

    mu: float = 0.5
    sigma: float = 0.5
    gamma: float = 2.0
    n_max: int = DEFAULT_S_MAX
    m_d: float = 1.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.n_max < 1:
            raise ValueError(f"n_max must be >= 1, got {self.n_max}")
        if self.m_d <= 0:
            raise ValueError(f"m_d must be > 0, got {self.m_d}")


def m_den(n_v, params: DdflParams):
    """Density weight in (0, 1], peaked where ``n_v/n_max`` equals ``mu``."""
    n_v = np.asarray(n_v, dtype=np.float64)
    if (n_v < 0).any() or (n_v > params.n_max).any():
        raise ValueError(f"n_v must lie in [0, {params.n_max}]")
    x = n_v / params.n_max
    out = np.exp(-((x - params.mu) ** 2) / (2.0 * params.sigma**2))
    return float(out) if out.ndim == 0 else out


def m_dis(d, params: DdflParams):
    """Distance weight in [1/e, 1], increasing with distance to the origin."""
    d = np.asarray(d, dtype=np.float64)
    if (d < 0).any() or (d > params.m_d).any():
        raise ValueError(f"d must lie in [0, {params.m_d}]")
    out = np.exp(d / params.m_d) / math.e
    return float(out) if out.ndim == 0 else out


def ddfl(confidence, label, n_v, d, params: DdflParams):
    """Density-distance focal loss and its derivative wrt confidence.

    ``p_t`` is the predicted probability of the true class; the loss is
    ``-(1 - p_t)^gamma * ln(p_t)`` scaled by the density and distance
    weights, so it is nonnegative and minimised by confident correct
    predictions.  Scalars in, scalars out; arrays broadcast elementwise.
    """
    weight = m_den(n_v, params) * m_dis(d, params)
    return focal_term(confidence, label, params.gamma, weight)


def focal_term(confidence, label, gamma: float, weight=1.0):
    """Weighted focal loss with exact gradient wrt the raw confidence."""
    conf = np.asarray(confidence, dtype=np.float64)
    label = np.asarray(label)
    clamped = np.clip(conf, CONFIDENCE_CLAMP, 1.0 - CONFIDENCE_CLAMP)
    positive = label == 1
    p_t = np.where(positive, clamped, 1.0 - clamped)
    one_minus = 1.0 - p_t
    log_pt = np.log(p_t)
    loss = -(one_minus**gamma) * log_pt * weight
    if gamma == 0.0:
        d_pt = -1.0 / p_t
    else:
        d_pt = gamma * one_minus ** (gamma - 1.0) * log_pt - one_minus**gamma / p_t
    d_conf = np.where(positive, d_pt, -d_pt) * weight
    # clamped inputs sit on a flat of the implemented function
    d_conf = np.where((conf < CONFIDENCE_CLAMP) | (conf > 1.0 - CONFIDENCE_CLAMP), 0.0, d_conf)
    if loss.ndim == 0:
        return float(loss), float(d_conf)
    return loss, d_conf


def total_loss(ddfl_sum: float, l_cb: float, l_cls: float = 0.0, l_box: float = 0.0) -> float:
    """Unweighted sum of the four loss terms; detection terms default to 0."""
    terms = (ddfl_sum, l_cb, l_cls, l_box)
    for name, value in zip(("ddfl_sum", "l_cb", "l_cls", "l_box"), terms):
        if not np.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value}")
        if value < 0:
            raise ValueError(f"{name} must be >= 0, got {value}")
    return float(sum(terms))


# ---------------------------------------------------------------------------
# block encoding and diffusion
# ---------------------------------------------------------------------------


@dataclass
class NfdmConfig:
    """Multi-scale diffusion config: radii, neighbor cap, and nets."""

    radii: list[float]
    max_k: int
    encoders: list[MlpNet]   # one per scale, input width = feature dim + 4
    output: MlpNet

    def __post_init__(self):
        radii = [float(r) for r in self.radii]
        if not radii or any(r <= 0 for r in radii):
            raise ValueError(f"radii must be positive, got {radii}")
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError(f"radii must be strictly increasing, got {radii}")
        if self.max_k < 1:
            raise ValueError(f"max_k must be >= 1, got {self.max_k}")
        if len(self.encoders) != len(radii):
            raise ValueError("need one encoder per radius")
        self.radii = radii


@dataclass(frozen=True)
class BlockFeatures:
    """Per-block features plus classifier confidences and threshold mask."""

    features: np.ndarray      # (m, c1) float64
    confidences: np.ndarray   # (m,) float64 in [0, 1]
    alpha: float

    def __post_init__(self):
        conf = np.asarray(self.confidences, dtype=np.float64)
        if conf.size and (not np.isfinite(conf).all() or conf.min() < 0 or conf.max() > 1):
            raise ValueError("confidences must be finite and within [0, 1]")
        object.__setattr__(self, "confidences", conf)

    @property
    def foreground_mask(self) -> np.ndarray:
        return self.confidences > self.alpha

    @property
    def m(self) -> int:
        return int(self.confidences.shape[0])


def encode_blocks(aug: AugmentedBlockMatrix, encoder: MlpNet) -> np.ndarray:
    """Per-point MLP over valid slots, max-pooled per block."""
    m, s, width = aug.values.shape
    if encoder.in_width != width:
        raise ValueError(f"encoder expects width {encoder.in_width}, aug has {width}")
    out = np.zeros((m, encoder.out_width), dtype=np.float64)
    if m == 0:
        return out
    rows_block, _ = np.nonzero(aug.valid_mask)
    if rows_block.size == 0:
        return out
    h = encoder.forward(aug.values[aug.valid_mask].astype(np.float64))
    occupied, starts = _segment_starts(rows_block)
    pooled, _ = _segment_max(h, starts, want_argmax=False)
    out[occupied] = pooled
    return out


def nfdm(
    centroids: np.ndarray,
    features: np.ndarray,
    cfg: NfdmConfig,
    chunk: int = 16384,
) -> np.ndarray:
    """Diffuse block features across multi-scale ball-query neighborhoods.

    Centers are processed in fixed-size chunks to bound peak memory; the
    per-row arithmetic is chunk-independent so results do not change with
    the chunk size.
    """
    centroids = np.asarray(centroids, dtype=np.float64).reshape(-1, 3)
    features = np.asarray(features, dtype=np.float64)
    m = centroids.shape[0]
    if m == 0:
        return np.zeros((0, cfg.output.out_width))
    if m <= chunk:
        caches = build_neighbor_caches(centroids, cfg)
        out, _ = nfdm_forward(cfg, features, caches)
        return out
    out = np.empty((m, cfg.output.out_width), dtype=np.float64)
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        caches = build_neighbor_caches(centroids, cfg, lo, hi)
        part, _ = nfdm_forward(cfg, features, caches, center_slice=(lo, hi))
        out[lo:hi] = part
    return out


def classify(features: np.ndarray, head: MlpNet, alpha: float = DEFAULT_ALPHA) -> BlockFeatures:
    """Score blocks with the sigmoid head; mask = confidence > alpha."""
    if head.layers[-1].act != "sigmoid":
        raise ValueError("classifier head must end in a sigmoid layer")
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] == 0:
        conf = np.empty(0, dtype=np.float64)
    else:
        conf = head.forward(features).ravel()
    return BlockFeatures(features=features, confidences=conf, alpha=float(alpha))


# --- internal diffusion machinery ------------------------------------------


@dataclass
class _NeighborCache:
    flat: np.ndarray      # (K_s,) neighbor block row per pair
    starts: np.ndarray    # (m + 1,) pair offsets per center
    seg: np.ndarray       # (K_s,) center row per pair (chunk-local)
    geo: np.ndarray       # (K_s, 4) float64 [rel xyz, distance]
    jorder: np.ndarray    # pair rows sorted by neighbor index
    jstarts: np.ndarray   # segment starts of jorder groups
    juniq: np.ndarray     # neighbor index per jorder group


def build_neighbor_caches(
    centroids: np.ndarray,
    cfg: NfdmConfig,
    lo: int = 0,
    hi: int | None = None,
) -> list[_NeighborCache]:
    """Per-scale neighbor pairs with guaranteed self-inclusion.

    ``lo``/``hi`` restrict the query centers to a row range; neighbor
    indices always refer to the full centroid set.
    """
    from .blocks import nearest_within_radius

    m = centroids.shape[0]
    hi = m if hi is None else hi
    span = hi - lo
    caches = []
    for radius in cfg.radii:
        if span == 0:
            empty = np.empty(0, dtype=np.int64)
            caches.append(
                _NeighborCache(
                    flat=empty, starts=np.zeros(1, dtype=np.int64), seg=empty,
                    geo=np.empty((0, 4), dtype=np.float64),
                    jorder=empty, jstarts=np.zeros(1, dtype=np.int64), juniq=empty,
                )
            )
            continue
        flat, offsets = nearest_within_radius(
            centroids[lo:hi], centroids, radius, cfg.max_k
        )
        seg = np.repeat(np.arange(span), np.diff(offsets))
        global_center = seg + lo
        has_self = np.bincount(seg[flat == global_center], minlength=span) > 0
        for i in np.flatnonzero(~has_self):
            # a center crowded out by max_k coincident ties keeps itself by
            # replacing its farthest kept neighbor
            flat[offsets[i + 1] - 1] = i + lo
        rel = centroids[flat] - centroids[global_center]
        dist = np.sqrt((rel**2).sum(axis=1))
        geo = np.concatenate([rel, dist[:, None]], axis=1)
        jorder = np.argsort(flat, kind="stable")
        juniq, jfirst = np.unique(flat[jorder], return_index=True)
        jstarts = np.concatenate([jfirst, [flat.shape[0]]]).astype(np.int64)
        caches.append(
            _NeighborCache(
                flat=flat, starts=offsets, seg=seg, geo=geo,
                jorder=jorder, jstarts=jstarts, juniq=juniq,
            )
        )
    return caches


def nfdm_forward(
    cfg: NfdmConfig,
    features: np.ndarray,
    caches: list[_NeighborCache],
    center_slice: tuple[int, int] | None = None,
    want_backward: bool = False,
):
    """Forward pass over prebuilt neighbor caches; returns (out, state).

    The first scale-encoder layer runs in split form: block-feature
    columns are projected once per block and gathered per pair, the four
    geometric columns per pair, which is algebraically the same affine
    map as acting on the concatenated input.
    """
    m, d = features.shape
    for enc in cfg.encoders:
        if enc.in_width != d + 4:
            raise ValueError(
                f"scale encoder expects width {enc.in_width}, need {d + 4}"
            )
    own = features if center_slice is None else features[center_slice[0]: center_slice[1]]
    if own.shape[0] == 0:
        return np.zeros((0, cfg.output.out_width)), []
    parts = [own]
    state = []
    for enc, cache in zip(cfg.encoders, caches):
        posts = []
        layer0 = enc.layers[0]
        w_feat, w_geo = layer0.w[:, :d], layer0.w[:, d:]
        pre = (features @ w_feat.T)[cache.flat]
        pre += cache.geo @ w_geo.T
        pre += layer0.b
        h = _activate_inplace(pre, layer0.act)
        posts.append(h)
        for layer in enc.layers[1:]:
            h = _activate_inplace(h @ layer.w.T + layer.b, layer.act)
            posts.append(h)
        g, first = _segment_max(h, cache.starts, cache.seg, want_argmax=want_backward)
        parts.append(g)
        state.append((posts, first))
    z = np.concatenate(parts, axis=1)
    if cfg.output.in_width != z.shape[1]:
        raise ValueError(
            f"output net expects width {cfg.output.in_width}, got {z.shape[1]}"
        )
    return cfg.output.forward(z), state


def nfdm_backward(cfg: NfdmConfig, d_out: np.ndarray, features, caches, state):
    """Backward pass matching a ``want_backward=True`` forward.

    Returns (d_features, output-net grads, per-scale encoder grads).
    """
    grads_output, dz = cfg.output.backward(d_out)
    d = features.shape[1]
    d_features = dz[:, :d].copy()
    col = d
    scale_grads = []
    for enc, cache, (posts, first) in zip(cfg.encoders, caches, state):
        width = enc.out_width
        dg = dz[:, col: col + width]
        col += width
        d_h = _segment_max_backward(dg, first, posts[-1].shape[0])
        grads: list = [None] * len(enc.layers)
        for li in range(len(enc.layers) - 1, 0, -1):
            layer = enc.layers[li]
            d_pre = d_h * _activation_grad(posts[li], layer.act)
            grads[li] = (d_pre.T @ posts[li - 1], d_pre.sum(axis=0))
            d_h = d_pre @ layer.w
        layer0 = enc.layers[0]
        d_pre = d_h * _activation_grad(posts[0], layer0.act)
        d_w_geo = d_pre.T @ cache.geo
        d_b = d_pre.sum(axis=0)
        # pair gradients sum back onto their source blocks
        d_projected = np.zeros((features.shape[0], layer0.w.shape[0]))
        d_projected[cache.juniq] = np.add.reduceat(
            d_pre[cache.jorder], cache.jstarts[:-1], axis=0
        )
        w_feat = layer0.w[:, :d]
        d_w_feat = d_projected.T @ features
        d_features += d_projected @ w_feat
        grads[0] = (np.concatenate([d_w_feat, d_w_geo], axis=1), d_b)
        scale_grads.append(grads)
    return d_features, grads_output, scale_grads


def _activate_inplace(pre: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return np.maximum(pre, 0.0, out=pre)
    if act == "sigmoid":
        np.negative(pre, out=pre)
        np.exp(pre, out=pre)
        pre += 1.0
        np.reciprocal(pre, out=pre)
        return pre
    return pre


def _activation_grad(post: np.ndarray, act: str):
    if act == "relu":
        return post > 0.0
    if act == "sigmoid":
        return post * (1.0 - post)
    return 1.0


def _segment_starts(sorted_groups: np.ndarray):
    """(unique groups, segment starts incl. end) of an ascending group array."""
    uniq, first = np.unique(sorted_groups, return_index=True)
    starts = np.concatenate([first, [sorted_groups.shape[0]]]).astype(np.int64)
    return uniq, starts


def _segment_max(
    values: np.ndarray,
    starts: np.ndarray,
    seg: np.ndarray | None = None,
    want_argmax: bool = True,
):
    """Max over contiguous nonempty row segments plus first-argmax rows."""
    out = np.maximum.reduceat(values, starts[:-1], axis=0)
    if not want_argmax:
        return out, None
    if seg is None:
        seg = np.repeat(np.arange(starts.shape[0] - 1), np.diff(starts))
    n = values.shape[0]
    rownum = np.arange(n, dtype=np.int32)[:, None]
    masked = np.where(values == out[seg], rownum, np.int32(n))
    first = np.minimum.reduceat(masked, starts[:-1], axis=0).astype(np.int64)
    return out, first


def _segment_max_backward(d_pooled: np.ndarray, first: np.ndarray, n_rows: int):
    d_values = np.zeros((n_rows, d_pooled.shape[1]), dtype=np.float64)
    cols = np.broadcast_to(np.arange(d_pooled.shape[1]), first.shape)
    d_values[first, cols] = d_pooled
    return d_values
