"""Boundary equality: bound operations equal native CLI output bit-for-bit.

Covers the secondary acceptance claim: for 10 seeded scenes, ``fps`` and
``icfps`` called on in-memory arrays return exactly the values the CLI
writes for the same data.  Run with ``-s`` to see the per-claim line.
"""

import json
import subprocess
import sys

import numpy as np
import pytest

import icfps as native
import icfps_bindings as bound


def run_cli(*args):
    proc = subprocess.run(
        [sys.executable, "-m", "icfps", *map(str, args)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    return proc


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("boundary")
    weights = root / "weights.json"
    w = native.IcfpsWeights.init(native.Rng(0), c=3)
    w.head.layers[0].w[:] = 0
    w.head.layers[0].b[:] = 2.0     # foreground-rich selection without training
    w.save(weights)
    scenes = []
    for seed in range(10):
        cloud_path = root / f"scene{seed}.pcf1"
        labels_path = root / f"scene{seed}.labels.json"
        run_cli("synth", "--seed", seed, "--preset", "small",
                "--out-cloud", cloud_path, "--out-labels", labels_path)
        scenes.append(cloud_path)
    return {"root": root, "weights": weights, "scenes": scenes}


class TestBoundaryEquality:
    def test_fps_matches_cli_on_ten_scenes(self, workspace):
        for cloud_path in workspace["scenes"]:
            out = cloud_path.with_suffix(".fps.json")
            run_cli("sample", "--cloud", cloud_path, "--method", "fps",
                    "--m", 512, "--out", out)
            cli_indices = json.loads(out.read_text())["indices"]
            points = native.load_cloud(cloud_path).points
            got = bound.fps(points, 512)
            assert got.tolist() == cli_indices, cloud_path.name
        print("\n[criterion 10a] PASS bound fps == CLI sample on 10 seeded scenes")

    def test_icfps_matches_cli_on_ten_scenes(self, workspace):
        for cloud_path in workspace["scenes"]:
            centers = cloud_path.with_suffix(".centers.pcf1")
            meta = cloud_path.with_suffix(".centers.json")
            run_cli("icfps", "--cloud", cloud_path,
                    "--weights", workspace["weights"], "--preset", "s",
                    "--out", centers, "--out-meta", meta)
            cli_features = native.load_cloud(centers).points
            cli_meta = json.loads(meta.read_text())

            points = native.load_cloud(cloud_path).points
            positions, features, tags = bound.icfps(
                points, workspace["weights"], preset="s"
            )
            assert features.astype(np.float32).tobytes() == cli_features.tobytes()
            cli_tags = [0 if t == "centroid" else 1
                        for t in cli_meta["origin_tags"]]
            assert tags.tolist() == cli_tags
            cli_positions = np.asarray(cli_meta["positions"], dtype=np.float64)
            assert positions.tobytes() == cli_positions.tobytes()
        print("\n[criterion 10b] PASS bound icfps == CLI icfps on 10 seeded scenes")
