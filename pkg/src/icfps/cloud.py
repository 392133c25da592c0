"""Point cloud data model and file I/O.

A :class:`PointCloud` is an N x C matrix of float32 values whose first
three columns are x, y, z in meters; any further columns are auxiliary
channels (intensity etc.).  A :class:`LabelSet` pairs a cloud with oriented
ground-truth boxes and a per-point box id (-1 for background).

Supported on-disk formats:

* ``pcf1`` (canonical, read/write): magic ``PCF1``, u32 LE point count,
  u32 LE channel count, then N*C float32 LE values, row-major.
* ``kitti_bin`` (read-only): headerless N x 4 float32 LE (x, y, z, intensity).
* ``xyz_ascii`` (read-only): one point per line, three decimals.
* label JSON: ``{"boxes": [{"center", "size", "yaw", "class"}...],
  "point_box_id": [...]}``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PCF1_MAGIC = b"PCF1"

# Slack (meters) allowed when checking that a labelled point sits inside
# its box; absorbs float32 storage rounding.
BOX_CONTAINMENT_SLACK = 1e-4


class FormatError(ValueError):
    """File does not parse under the named format."""


class LengthError(FormatError):
    """Payload length disagrees with the declared header."""


class ValidationError(ValueError):
    """Data parsed but violates a documented invariant."""


@dataclass(frozen=True)
class PointCloud:
    """Immutable N x C point matrix (float32, columns 0-2 are xyz meters)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float32)
        if pts.ndim != 2:
            raise ValidationError(f"points must be 2-D, got shape {pts.shape}")
        if pts.shape[1] < 3:
            raise ValidationError(f"need at least 3 channels, got {pts.shape[1]}")
        bad = ~np.isfinite(pts)
        if bad.any():
            row = int(np.argwhere(bad)[0, 0])
            raise ValidationError(f"non-finite value at row {row}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def c(self) -> int:
        return self.points.shape[1]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]


@dataclass(frozen=True)
class Box:
    """Oriented box: center xyz (m), size l/w/h (m), yaw about +z (rad)."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float
    cls: str = "car"


@dataclass(frozen=True)
class LabelSet:
    """Per-point instance labels: -1 background, >= 0 indexes ``boxes``."""

    point_box_id: np.ndarray
    boxes: tuple[Box, ...] = field(default_factory=tuple)

    def __post_init__(self):
        ids = np.asarray(self.point_box_id, dtype=np.int64)
        if ids.ndim != 1:
            raise ValidationError("point_box_id must be 1-D")
        if ids.size and ids.max(initial=-1) >= len(self.boxes):
            bad = int(np.argmax(ids))
            raise ValidationError(
                f"point_box_id[{bad}] = {int(ids[bad])} but only "
                f"{len(self.boxes)} boxes exist"
            )
        if ids.size and ids.min(initial=0) < -1:
            raise ValidationError("point_box_id entries must be >= -1")
        ids.setflags(write=False)
        object.__setattr__(self, "point_box_id", ids)
        object.__setattr__(self, "boxes", tuple(self.boxes))

    @property
    def n(self) -> int:
        return int(self.point_box_id.shape[0])

    def foreground_mask(self) -> np.ndarray:
        return self.point_box_id >= 0

    def validate_against(self, cloud: PointCloud) -> None:
        """Check length agreement and box containment for every labelled point."""
        if self.n != cloud.n:
            raise ValidationError(
                f"point_box_id has {self.n} entries but cloud has {cloud.n} points"
            )
        for b, box in enumerate(self.boxes):
            member = self.point_box_id == b
            if not member.any():
                continue
            inside = points_in_box(cloud.xyz[member], box, slack=BOX_CONTAINMENT_SLACK)
            if not inside.all():
                row = int(np.flatnonzero(member)[np.argmin(inside)])
                raise ValidationError(
                    f"point {row} labelled with box {b} lies outside it"
                )


def points_in_box(xyz: np.ndarray, box: Box, slack: float = 0.0) -> np.ndarray:
    """Boolean mask of points inside a yaw-rotated box (closed, +- slack)."""
    p = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    cx, cy, cz = box.center
    dx = p[:, 0] - cx
    dy = p[:, 1] - cy
    dz = p[:, 2] - cz
    cos_y = math.cos(box.yaw)
    sin_y = math.sin(box.yaw)
    # rotate into the box frame (inverse of the yaw rotation)
    local_x = cos_y * dx + sin_y * dy
    local_y = -sin_y * dx + cos_y * dy
    half = np.asarray(box.size, dtype=np.float64) / 2.0 + slack
    return (
        (np.abs(local_x) <= half[0])
        & (np.abs(local_y) <= half[1])
        & (np.abs(dz) <= half[2])
    )


# ---------------------------------------------------------------------------
# cloud file I/O
# ---------------------------------------------------------------------------


def load_cloud(path, format: str = "pcf1") -> PointCloud:
    """Load a point cloud from ``path`` in the named format."""
    path = Path(path)
    if format == "pcf1":
        return _load_pcf1(path)
    if format == "kitti_bin":
        return _load_kitti_bin(path)
    if format == "xyz_ascii":
        return _load_xyz_ascii(path)
    raise ValueError(f"unknown cloud format {format!r}")


def save_cloud(cloud: PointCloud, path) -> None:
    """Write ``cloud`` to ``path`` in pcf1; load_cloud round-trips bit-exactly."""
    path = Path(path)
    header = PCF1_MAGIC + struct.pack("<II", cloud.n, cloud.c)
    payload = np.ascontiguousarray(cloud.points, dtype="<f4").tobytes()
    try:
        path.write_bytes(header + payload)
    except OSError as exc:
        raise OSError(f"failed to write {path}: {exc}") from exc


def _load_pcf1(path: Path) -> PointCloud:
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != PCF1_MAGIC:
        raise FormatError(f"{path}: not a pcf1 file (bad magic)")
    n, c = struct.unpack("<II", data[4:12])
    if c < 3:
        raise FormatError(f"{path}: channel count {c} < 3")
    expected = 12 + 4 * n * c
    if len(data) != expected:
        raise LengthError(
            f"{path}: expected {expected} bytes for {n}x{c} points, got {len(data)}"
        )
    values = np.frombuffer(data, dtype="<f4", offset=12).reshape(n, c)
    return _validated(values, path)


def _load_kitti_bin(path: Path) -> PointCloud:
    data = path.read_bytes()
    if len(data) % 16 != 0:
        raise LengthError(
            f"{path}: kitti_bin payload must be a multiple of 16 bytes, got {len(data)}"
        )
    values = np.frombuffer(data, dtype="<f4").reshape(-1, 4)
    return _validated(values, path)


def _load_xyz_ascii(path: Path) -> PointCloud:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise FormatError(
                    f"{path}:{lineno}: expected 3 values, got {len(parts)}"
                )
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    values = np.asarray(rows, dtype=np.float32).reshape(-1, 3)
    return _validated(values, path)


def _validated(values: np.ndarray, path: Path) -> PointCloud:
    bad = ~np.isfinite(values)
    if bad.any():
        row = int(np.argwhere(bad)[0, 0])
        raise ValidationError(f"{path}: non-finite value at row {row}")
    return PointCloud(points=values.copy())


# ---------------------------------------------------------------------------
# label file I/O
# ---------------------------------------------------------------------------


def save_labels(labels: LabelSet, path) -> None:
    doc = {
        "boxes": [
            {
                "center": [float(v) for v in box.center],
                "size": [float(v) for v in box.size],
                "yaw": float(box.yaw),
                "class": box.cls,
            }
            for box in labels.boxes
        ],
        "point_box_id": [int(v) for v in labels.point_box_id],
    }
    Path(path).write_text(json.dumps(doc))


def load_labels(path, cloud: PointCloud | None = None) -> LabelSet:
    """Load a label JSON; validate against ``cloud`` when one is supplied."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: top level must be an object")
    for key in ("boxes", "point_box_id"):
        if key not in doc:
            raise ValidationError(f"{path}: missing key {key!r}")
    boxes = []
    for i, entry in enumerate(doc["boxes"]):
        boxes.append(_parse_box(entry, f"boxes[{i}]", path))
    ids = doc["point_box_id"]
    if not isinstance(ids, list) or not all(isinstance(v, int) for v in ids):
        raise ValidationError(f"{path}: point_box_id must be a list of integers")
    try:
        labels = LabelSet(point_box_id=np.asarray(ids, dtype=np.int64), boxes=tuple(boxes))
    except ValidationError as exc:
        raise ValidationError(f"{path}: point_box_id: {exc}") from exc
    if cloud is not None:
        labels.validate_against(cloud)
    return labels


def _parse_box(entry, where: str, path: Path) -> Box:
    if not isinstance(entry, dict):
        raise ValidationError(f"{path}: {where} must be an object")
    for key, width in (("center", 3), ("size", 3)):
        value = entry.get(key)
        if (
            not isinstance(value, list)
            or len(value) != width
            or not all(isinstance(v, (int, float)) for v in value)
        ):
            raise ValidationError(f"{path}: {where}.{key} must be {width} numbers")
    if not isinstance(entry.get("yaw"), (int, float)):
        raise ValidationError(f"{path}: {where}.yaw must be a number")
    size = entry["size"]
    if any(v <= 0 for v in size):
        raise ValidationError(f"{path}: {where}.size must be positive")
    return Box(
        center=tuple(float(v) for v in entry["center"]),
        size=tuple(float(v) for v in size),
        yaw=float(entry["yaw"]),
        cls=str(entry.get("class", "car")),
    )
