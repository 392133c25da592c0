"""In-memory array bindings for the icfps sampling toolkit.

Exposes ``fps``, ``ball_query``, ``partition``, and ``icfps`` directly on
numeric arrays so detection pipelines can call the sampler without file
round-trips.  Contiguous float32 input is consumed zero-copy; any other
real-numeric layout is converted with a single validated copy.  No call
retains a caller's buffer once it returns, results are pure functions of
the arguments, and heavy kernels run inside numpy, which drops the
interpreter lock during native execution.

The package version is pinned one-to-one to the toolkit version it binds.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

import icfps as _native
from icfps.blocks import ball_query as _native_ball_query
from icfps.blocks import partition as _native_partition
from icfps.ciss import PRESETS, icfps_preset as _native_icfps
from icfps.cloud import PointCloud
from icfps.samplers import fps as _native_fps
from icfps.weights import IcfpsWeights

__version__ = "0.1.0"

if __version__ != _native.__version__:
    raise ImportError(
        f"icfps-bindings {__version__} requires icfps {__version__}, "
        f"found {_native.__version__}"
    )

__all__ = ["fps", "ball_query", "partition", "icfps", "__version__"]


class ArgumentTypeError(TypeError):
    """Input cannot be interpreted as a numeric array of the right shape."""


def _array_view(data, name: str, columns: int | None = 3, min_columns: int | None = None):
    """Validated dense float32 view of caller data.

    Zero-copy when the input is already a contiguous float32 array;
    otherwise exactly one converting copy is made.  The caller's buffer is
    never written to or kept.
    """
    try:
        arr = np.asarray(data)
    except Exception as exc:
        raise ArgumentTypeError(f"{name}: not array-like: {exc}") from exc
    if arr.dtype == object or arr.dtype.kind not in "fiu":
        raise ArgumentTypeError(f"{name}: dtype {arr.dtype} is not numeric")
    if arr.ndim != 2:
        raise ArgumentTypeError(f"{name}: expected a 2-D array, got shape {arr.shape}")
    if columns is not None and arr.shape[1] != columns:
        raise ArgumentTypeError(f"{name}: expected {columns} columns, got {arr.shape[1]}")
    if min_columns is not None and arr.shape[1] < min_columns:
        raise ArgumentTypeError(
            f"{name}: expected at least {min_columns} columns, got {arr.shape[1]}"
        )
    if arr.dtype == np.float32 and arr.flags.c_contiguous:
        view = arr[:]                      # zero-copy; read-only flag stays local
    else:
        view = np.ascontiguousarray(arr, dtype=np.float32)
    if not np.isfinite(view).all():
        raise ValueError(f"{name}: contains non-finite values")
    view.setflags(write=False)
    return view


def fps(points, m: int, start: int = 0) -> np.ndarray:
    """Exact farthest point sampling; returns the selected row indices.

    Equals the toolkit CLI ``sample --method fps`` output on identical
    data, index for index.
    """
    view = _array_view(points, "points", columns=None, min_columns=3)
    cloud = PointCloud(points=view)
    return _native_fps(cloud, m, start).indices.copy()


def ball_query(centers, targets, radius: float, max_k: int) -> list[np.ndarray]:
    """Radius neighbors of each center among targets, nearest-first."""
    c = _array_view(centers, "centers")
    t = _array_view(targets, "targets")
    return _native_ball_query(c, t, radius, max_k)


def partition(points, block_size=None, s_max: int | None = None) -> dict:
    """Block partition summary: keys, counts, centroids, member lists."""
    view = _array_view(points, "points", columns=None, min_columns=3)
    kwargs = {}
    if block_size is not None:
        kwargs["block_size"] = tuple(float(v) for v in block_size)
    if s_max is not None:
        kwargs["s_max"] = int(s_max)
    grid = _native_partition(PointCloud(points=view), **kwargs)
    return {
        "block_size": grid.block_size.copy(),
        "origin": grid.origin.copy(),
        "block_keys": grid.block_keys.copy(),
        "counts": grid.counts.copy(),
        "centroids": grid.centroids.copy(),
        "s_max": grid.s_max,
        "point_lists": [grid.point_list(i).copy() for i in range(grid.m)],
    }


def icfps(points, weights_path, preset: str = "s"):
    """Full instance-centroid sampling pipeline on an in-memory cloud.

    Weights are passed by file path, keeping the call surface minimal.
    Returns ``(positions, features, tags)`` where tags are 0 for centroid
    rows and 1 for instance rows; values match the CLI ``icfps``
    subcommand bit for bit on identical inputs.
    """
    weights_path = Path(weights_path)
    if not weights_path.exists():
        raise FileNotFoundError(f"weights not found: {weights_path}")
    if preset.lower() not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    view = _array_view(points, "points", columns=None, min_columns=3)
    weights = IcfpsWeights.load(weights_path)
    centers = _native_icfps(PointCloud(points=view), weights, preset.lower())
    return (
        centers.positions.copy(),
        centers.features.copy(),
        centers.origin_tags.copy(),
    )
