"""Minimal multi-layer perceptron with explicit forward/backward passes.

Parameters are float64 so finite-difference gradient checks are
meaningful.  A net is a list of affine layers with relu / sigmoid / no
activation; ``forward`` caches activations, ``backward`` computes exact
reverse-mode gradients for every parameter plus the input, and
``sgd_step`` applies a plain gradient-descent update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import Rng

ACTIVATIONS = ("relu", "none", "sigmoid")


class StaleCacheError(RuntimeError):
    """backward was called without a matching forward."""


@dataclass
class Layer:
    w: np.ndarray   # (out, in) float64
    b: np.ndarray   # (out,) float64
    act: str = "relu"

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[0],):
            raise ValueError(f"bad layer shapes w{self.w.shape} b{self.b.shape}")
        if self.act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.act!r}")
        if not (np.isfinite(self.w).all() and np.isfinite(self.b).all()):
            raise ValueError("layer parameters must be finite")


class MlpNet:
    """Stack of affine + activation layers with cached-state backprop."""

    def __init__(self, layers: list[Layer]):
        if not layers:
            raise ValueError("net needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.w.shape[1] != prev.w.shape[0]:
                raise ValueError(
                    f"layer widths do not chain: {prev.w.shape} -> {nxt.w.shape}"
                )
        self.layers = layers
        self._cache = None

    @classmethod
    def init(cls, in_width: int, widths: list[int], acts: list[str], rng: Rng) -> "MlpNet":
        """Uniform(-sqrt(1/in), +sqrt(1/in)) initialization per layer."""
        if len(widths) != len(acts):
            raise ValueError("widths and acts must have equal length")
        layers = []
        fan_in = in_width
        for width, act in zip(widths, acts):
            bound = np.sqrt(1.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(width, fan_in))
            b = rng.uniform(-bound, bound, size=width)
            layers.append(Layer(w=w, b=b, act=act))
            fan_in = width
        return cls(layers)

    @property
    def in_width(self) -> int:
        return self.layers[0].w.shape[1]

    @property
    def out_width(self) -> int:
        return self.layers[-1].w.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Run the net on a (batch, in) matrix; caches state for backward."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.in_width:
            raise ValueError(f"input width {x.shape[1]} != expected {self.in_width}")
        inputs, posts = [], []
        h = x
        for layer in self.layers:
            inputs.append(h)
            pre = h @ layer.w.T + layer.b
            h = _activate(pre, layer.act)
            posts.append(h)
        self._cache = (inputs, posts)
        return h[0] if squeeze else h

    def backward(self, d_out: np.ndarray) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
        """Exact gradients from the last forward: ([(dW, db)...], dX)."""
        if self._cache is None:
            raise StaleCacheError("backward called before forward")
        inputs, posts = self._cache
        d_out = np.asarray(d_out, dtype=np.float64)
        if d_out.ndim == 1:
            d_out = d_out[None, :]
        if d_out.shape != posts[-1].shape:
            raise StaleCacheError(
                f"upstream gradient shape {d_out.shape} does not match "
                f"cached output {posts[-1].shape}"
            )
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.layers)
        d_h = d_out
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            d_pre = d_h * _activation_grad(posts[i], layer.act)
            grads[i] = (d_pre.T @ inputs[i], d_pre.sum(axis=0))
            d_h = d_pre @ layer.w
        return grads, d_h

    def sgd_step(self, grads, lr: float) -> "MlpNet":
        """In-place update: theta <- theta - lr * grad."""
        if len(grads) != len(self.layers):
            raise ValueError("gradient count does not match layer count")
        for layer, (dw, db) in zip(self.layers, grads):
            if dw.shape != layer.w.shape or db.shape != layer.b.shape:
                raise ValueError("gradient shapes do not match layer shapes")
            layer.w -= lr * dw
            layer.b -= lr * db
        return self

    def copy(self) -> "MlpNet":
        return MlpNet(
            [Layer(w=l.w.copy(), b=l.b.copy(), act=l.act) for l in self.layers]
        )

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.append(layer.w)
            out.append(layer.b)
        return out

    def to_json_obj(self) -> list[dict]:
        return [
            {
                "w": [float(v) for v in layer.w.ravel()],
                "rows": int(layer.w.shape[0]),
                "cols": int(layer.w.shape[1]),
                "b": [float(v) for v in layer.b],
                "act": layer.act,
            }
            for layer in self.layers
        ]

    @classmethod
    def from_json_obj(cls, obj) -> "MlpNet":
        layers = []
        for entry in obj:
            rows, cols = int(entry["rows"]), int(entry["cols"])
            w = np.asarray(entry["w"], dtype=np.float64).reshape(rows, cols)
            b = np.asarray(entry["b"], dtype=np.float64)
            layers.append(Layer(w=w, b=b, act=str(entry["act"])))
        return cls(layers)


def _activate(pre: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return np.maximum(pre, 0.0)
    if act == "sigmoid":
        return 1.0 / (1.0 + np.exp(-pre))
    return pre


def _activation_grad(post: np.ndarray, act: str) -> np.ndarray:
    # both relu and sigmoid derivatives are recoverable from the output
    if act == "relu":
        return (post > 0.0).astype(np.float64)
    if act == "sigmoid":
        return post * (1.0 - post)
    return np.ones_like(post)


def forward(net: MlpNet, x: np.ndarray) -> np.ndarray:
    return net.forward(x)


def backward(net: MlpNet, d_out: np.ndarray):
    return net.backward(d_out)


def sgd_step(net: MlpNet, grads, lr: float) -> MlpNet:
    return net.sgd_step(grads, lr)


def masked_maxpool(values: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-block elementwise max over valid slots of a (m, s, d) tensor.

    Returns (pooled m x d, empty flags); blocks with no valid slot pool to
    the zero vector and are flagged empty.
    """
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if values.ndim != 3 or mask.shape != values.shape[:2]:
        raise ValueError(f"bad shapes values{values.shape} mask{mask.shape}")
    guarded = np.where(mask[:, :, None], values, -np.inf)
    pooled = guarded.max(axis=1)
    empty = ~mask.any(axis=1)
    pooled[empty] = 0.0
    return pooled, empty
