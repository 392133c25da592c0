"""Point cloud data model, file formats, labels, and RNG determinism."""

import json
import struct

import numpy as np
import pytest

from icfps import (
    Box,
    FormatError,
    LabelSet,
    LengthError,
    PointCloud,
    Rng,
    ValidationError,
    load_cloud,
    load_labels,
    points_in_box,
    save_cloud,
    save_labels,
)


def make_cloud(rows, c=3):
    return PointCloud(points=np.asarray(rows, dtype=np.float32).reshape(-1, c))


class TestPcf1:
    def test_header_roundtrip(self, tmp_path):
        """pcf1 file with (N=2, C=3) header loads the exact payload rows."""
        path = tmp_path / "a.pcf1"
        payload = struct.pack("<6f", 0, 0, 0, 1, 2, 3)
        path.write_bytes(b"PCF1" + struct.pack("<II", 2, 3) + payload)
        cloud = load_cloud(path)
        assert cloud.n == 2 and cloud.c == 3
        np.testing.assert_array_equal(cloud.points, [[0, 0, 0], [1, 2, 3]])

    def test_save_load_bit_identity(self, tmp_path):
        rng = np.random.default_rng(0)
        cloud = make_cloud(rng.uniform(-50, 50, (257, 5)).astype(np.float32), c=5)
        path = tmp_path / "b.pcf1"
        save_cloud(cloud, path)
        again = load_cloud(path)
        assert again.points.tobytes() == cloud.points.tobytes()
        # save of the reload is byte-identical on disk too
        path2 = tmp_path / "c.pcf1"
        save_cloud(again, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_empty_cloud_is_12_byte_file(self, tmp_path):
        path = tmp_path / "e.pcf1"
        save_cloud(make_cloud(np.empty((0, 3))), path)
        assert path.stat().st_size == 12
        assert load_cloud(path).n == 0

    def test_wide_channel_roundtrip(self, tmp_path):
        cloud = make_cloud(np.arange(21, dtype=np.float32), c=7)
        path = tmp_path / "w.pcf1"
        save_cloud(cloud, path)
        assert load_cloud(path).c == 7

    def test_truncated_payload_is_length_error(self, tmp_path):
        path = tmp_path / "t.pcf1"
        path.write_bytes(b"PCF1" + struct.pack("<II", 3, 3) + struct.pack("<6f", *range(6)))
        with pytest.raises(LengthError):
            load_cloud(path)

    def test_bad_magic_is_format_error(self, tmp_path):
        path = tmp_path / "m.pcf1"
        path.write_bytes(b"NOPE" + struct.pack("<II", 0, 3))
        with pytest.raises(FormatError):
            load_cloud(path)

    def test_non_finite_is_validation_error_with_row(self, tmp_path):
        path = tmp_path / "n.pcf1"
        payload = struct.pack("<6f", 0, 0, 0, np.nan, 0, 0)
        path.write_bytes(b"PCF1" + struct.pack("<II", 2, 3) + payload)
        with pytest.raises(ValidationError, match="row 1"):
            load_cloud(path)


class TestOtherFormats:
    def test_kitti_bin_16_bytes_is_one_point(self, tmp_path):
        path = tmp_path / "k.bin"
        path.write_bytes(struct.pack("<4f", 1, 2, 3, 0.5))
        cloud = load_cloud(path, format="kitti_bin")
        assert cloud.n == 1 and cloud.c == 4

    def test_kitti_bin_ragged_length(self, tmp_path):
        path = tmp_path / "k.bin"
        path.write_bytes(b"\x00" * 20)
        with pytest.raises(LengthError):
            load_cloud(path, format="kitti_bin")

    def test_xyz_ascii(self, tmp_path):
        path = tmp_path / "p.xyz"
        path.write_text("0 0 0\n1.5 -2 3e1\n")
        cloud = load_cloud(path, format="xyz_ascii")
        assert cloud.n == 2 and cloud.c == 3
        np.testing.assert_allclose(cloud.points[1], [1.5, -2, 30])

    def test_xyz_ascii_bad_column_count(self, tmp_path):
        path = tmp_path / "p.xyz"
        path.write_text("0 0\n")
        with pytest.raises(FormatError):
            load_cloud(path, format="xyz_ascii")


class TestLabels:
    def scene(self):
        cloud = make_cloud([[0, 0, 0.5], [5, 5, 0]])
        box = Box(center=(0, 0, 0.5), size=(2, 2, 2), yaw=0.3, cls="car")
        labels = LabelSet(point_box_id=np.array([0, -1]), boxes=(box,))
        return cloud, labels

    def test_roundtrip(self, tmp_path):
        cloud, labels = self.scene()
        path = tmp_path / "l.json"
        save_labels(labels, path)
        again = load_labels(path, cloud)
        assert again.boxes == labels.boxes
        np.testing.assert_array_equal(again.point_box_id, labels.point_box_id)

    def test_id_out_of_range(self):
        with pytest.raises(ValidationError):
            LabelSet(point_box_id=np.array([5]), boxes=(Box((0, 0, 0), (1, 1, 1), 0.0),))

    def test_length_mismatch_vs_cloud(self, tmp_path):
        cloud, labels = self.scene()
        path = tmp_path / "l.json"
        save_labels(labels, path)
        short = make_cloud([[0, 0, 0.5]])
        with pytest.raises(ValidationError):
            load_labels(path, short)

    def test_schema_violation_names_key(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"boxes": [{"center": [0, 0], "size": [1, 1, 1], "yaw": 0}],
                                    "point_box_id": []}))
        with pytest.raises(ValidationError, match=r"boxes\[0\].center"):
            load_labels(path)

    def test_containment_validated_on_load(self, tmp_path):
        cloud = make_cloud([[9, 9, 9]])
        labels_doc = {"boxes": [{"center": [0, 0, 0], "size": [1, 1, 1], "yaw": 0.0,
                                 "class": "car"}], "point_box_id": [0]}
        path = tmp_path / "l.json"
        path.write_text(json.dumps(labels_doc))
        with pytest.raises(ValidationError, match="outside"):
            load_labels(path, cloud)


class TestBoxContainment:
    def test_yawed_box(self):
        box = Box(center=(1, 1, 0), size=(4, 1, 2), yaw=np.pi / 2, cls="car")
        # after 90 deg yaw the long axis points along y
        inside = points_in_box(np.array([[1, 2.9, 0], [2.9, 1, 0]]), box)
        assert inside.tolist() == [True, False]

    def test_slack(self):
        box = Box(center=(0, 0, 0), size=(2, 2, 2), yaw=0.0)
        on_face = np.array([[1.00005, 0, 0]])
        assert not points_in_box(on_face, box).any()
        assert points_in_box(on_face, box, slack=1e-4).all()


class TestRng:
    def test_equal_seeds_equal_streams(self):
        a, b = Rng(123), Rng(123)
        np.testing.assert_array_equal(
            a.uniform(size=1_000_000), b.uniform(size=1_000_000)
        )

    def test_different_seeds_differ(self):
        assert not np.array_equal(Rng(1).uniform(size=100), Rng(2).uniform(size=100))

    def test_split_children_are_independent_and_deterministic(self):
        kids_a = Rng(7).split(3)
        kids_b = Rng(7).split(3)
        for ka, kb in zip(kids_a, kids_b):
            np.testing.assert_array_equal(ka.uniform(size=64), kb.uniform(size=64))
        assert not np.array_equal(kids_a[0].uniform(size=64), kids_a[1].uniform(size=64))


class TestCloudValidation:
    def test_needs_three_channels(self):
        with pytest.raises(ValidationError):
            PointCloud(points=np.zeros((4, 2), dtype=np.float32))

    def test_rejects_nan(self):
        pts = np.zeros((2, 3), dtype=np.float32)
        pts[1, 2] = np.inf
        with pytest.raises(ValidationError, match="row 1"):
            PointCloud(points=pts)
