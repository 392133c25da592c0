"""CLI dispatch, subcommand flows, and the benchmark harness."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from icfps import IcfpsWeights, Rng, cli_dispatch, load_cloud, run_bench


def run_cli(*args):
    return cli_dispatch([str(a) for a in args])


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    """A directory with two tiny synthesized scenes and init weights."""
    root = tmp_path_factory.mktemp("scenes")
    from icfps import SceneSpec, save_cloud, save_labels, synth

    for seed in (0, 1):
        spec = SceneSpec(seed=seed, ground_radius=8.0, ground_points=900,
                         instances=(("car", (60, 110)), ("pedestrian", (40, 70))),
                         distance_range=(2.0, 7.0))
        cloud, labels = synth(spec)
        save_cloud(cloud, root / f"scene{seed}.pcf1")
        save_labels(labels, root / f"scene{seed}.labels.json")
    IcfpsWeights.init(Rng(0), c=3).save(root / "weights.json")
    return root


class TestDispatch:
    def test_no_args_usage_error(self, capsys):
        assert run_cli() == 1
        out = capsys.readouterr().out
        assert "synth" in out and "bench" in out

    def test_unknown_subcommand(self):
        assert run_cli("frobnicate") == 1

    def test_help_exits_zero(self):
        assert run_cli("--help") == 0

    def test_data_error_exit_2(self, tmp_path, capsys):
        code = run_cli("partition", "--cloud", tmp_path / "missing.pcf1")
        assert code == 2
        assert "missing.pcf1" in capsys.readouterr().err


class TestSynthCommand:
    def test_idempotent_outputs(self, tmp_path):
        paths = []
        for tag in ("a", "b"):
            cloud = tmp_path / f"{tag}.pcf1"
            labels = tmp_path / f"{tag}.labels.json"
            assert run_cli("synth", "--seed", 7, "--preset", "small",
                           "--out-cloud", cloud, "--out-labels", labels) == 0
            paths.append((cloud.read_bytes(), labels.read_bytes()))
        assert paths[0] == paths[1]


class TestSampleAndEval:
    def test_fps_sample_then_eval(self, scene_dir, tmp_path, capsys):
        out = tmp_path / "sample.json"
        assert run_cli("sample", "--cloud", scene_dir / "scene0.pcf1",
                       "--method", "fps", "--m", 64, "--out", out) == 0
        doc = json.loads(out.read_text())
        assert len(doc["indices"]) == 64
        assert doc["index_space"] == "points"

        metrics_out = tmp_path / "metrics.json"
        assert run_cli("eval", "--samples", out,
                       "--cloud", scene_dir / "scene0.pcf1",
                       "--labels", scene_dir / "scene0.labels.json",
                       "--out", metrics_out) == 0
        metrics = json.loads(metrics_out.read_text())
        assert 0.0 <= metrics["foreground_recall"] <= 1.0
        assert metrics["counts"]["samples"] == 64

    def test_ffps_and_random_samples(self, scene_dir, tmp_path):
        for method in ("ffps", "random", "grid-centroid"):
            out = tmp_path / f"{method}.json"
            assert run_cli("sample", "--cloud", scene_dir / "scene0.pcf1",
                           "--method", method, "--m", 16, "--out", out) == 0
            doc = json.loads(out.read_text())
            assert len(doc["indices"]) == 16
        assert json.loads((tmp_path / "grid-centroid.json").read_text())[
            "index_space"] == "blocks"

    def test_partition_dump(self, scene_dir, tmp_path):
        out = tmp_path / "grid.json"
        assert run_cli("partition", "--cloud", scene_dir / "scene0.pcf1",
                       "--out", out) == 0
        doc = json.loads(out.read_text())
        assert doc["m"] == len(doc["block_keys"]) == len(doc["counts"])

    def test_icfps_roundtrip_and_eval(self, scene_dir, tmp_path):
        centers = tmp_path / "centers.pcf1"
        meta = tmp_path / "centers.json"
        assert run_cli("icfps", "--cloud", scene_dir / "scene0.pcf1",
                       "--weights", scene_dir / "weights.json",
                       "--preset", "s", "--m1", 32, "--m2", 32,
                       "--out", centers, "--out-meta", meta) == 0
        feature_cloud = load_cloud(centers)
        doc = json.loads(meta.read_text())
        assert feature_cloud.n == len(doc["origin_tags"])
        assert run_cli("eval", "--samples", meta,
                       "--cloud", scene_dir / "scene0.pcf1",
                       "--labels", scene_dir / "scene0.labels.json") == 0


class TestTrainCommand:
    def test_train_writes_weights(self, scene_dir, tmp_path):
        out = tmp_path / "trained.json"
        assert run_cli("train", "--scenes", scene_dir, "--epochs", 2,
                       "--seed", 3, "--out-weights", out) == 0
        weights = IcfpsWeights.load(out)
        assert weights.c == 3

    def test_missing_scene_dir(self, tmp_path):
        assert run_cli("train", "--scenes", tmp_path / "nope",
                       "--out-weights", tmp_path / "w.json") == 2


class TestBench:
    def config(self, scene_dir, tmp_path, methods=None, **extra):
        cfg = {
            "scenes": ["scene0.pcf1"],
            "methods": methods or [{"name": "fps", "m": 32},
                                   {"name": "ciss", "preset": "s",
                                    "weights": "weights.json"}],
            "repeats": 5,
            "warmups": 1,
            "seed": 42,
        }
        cfg.update(extra)
        path = scene_dir / f"bench_{len(str(extra))}.json"
        path.write_text(json.dumps(cfg))
        return path

    def test_record_count_and_median(self, scene_dir, tmp_path):
        cfg = self.config(scene_dir, tmp_path)
        report = run_bench(cfg, out_prefix=tmp_path / "report")
        assert len(report["records"]) == 2
        for record in report["records"]:
            times = record["times_ms"]
            assert len(times) == 5
            assert record["median_ms"] == sorted(times)[2]
            assert record["min_ms"] <= record["median_ms"] <= record["max_ms"]
            assert record["config_hash"] == report["config_hash"]

    def test_csv_json_value_parity(self, scene_dir, tmp_path):
        cfg = self.config(scene_dir, tmp_path)
        run_bench(cfg, out_prefix=tmp_path / "report")
        report = json.loads((tmp_path / "report.json").read_text())
        with open(tmp_path / "report.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == len(report["records"])
        for row, record in zip(rows, report["records"]):
            assert row["method"] == record["method"]
            assert float(row["median_ms"]) == record["median_ms"]
            assert int(row["n"]) == record["n"]
            for key in ("foreground_recall", "instance_coverage"):
                if record[key] is None:
                    assert row[key] == ""
                else:
                    assert float(row[key]) == record[key]

    def test_flag_overrides_config(self, scene_dir, tmp_path):
        cfg = self.config(scene_dir, tmp_path, repeats=5)
        report = run_bench(cfg, repeats=3, warmups=0)
        assert report["repeats"] == 3
        assert all(len(r["times_ms"]) == 3 for r in report["records"])

    def test_missing_cloud_fails_fast(self, scene_dir, tmp_path, capsys):
        cfg_path = scene_dir / "bad.json"
        cfg_path.write_text(json.dumps({
            "scenes": ["ghost.pcf1"],
            "methods": [{"name": "fps", "m": 8}],
        }))
        code = run_cli("bench", "--config", cfg_path)
        assert code == 2
        assert "ghost.pcf1" in capsys.readouterr().err

    def test_missing_weights_fails_fast(self, scene_dir, tmp_path):
        cfg = self.config(scene_dir, tmp_path,
                          methods=[{"name": "ciss", "preset": "s",
                                    "weights": "ghost_weights.json"}])
        with pytest.raises(FileNotFoundError, match="ghost_weights"):
            run_bench(cfg)

    def test_synth_scene_entry(self, scene_dir, tmp_path):
        cfg = self.config(
            scene_dir, tmp_path,
            scenes=[{"synth": {"seed": 4, "ground_radius": 8.0,
                               "ground_points": 500,
                               "instances": [["car", [30, 60]]],
                               "distance_range": [2.0, 7.0]}}],
            methods=[{"name": "random", "m": 40},
                     {"name": "grid-centroid", "m": 16}],
        )
        report = run_bench(cfg, repeats=3, warmups=0)
        assert len(report["records"]) == 2
        assert report["records"][0]["scene"].startswith("synth[")

    def test_repeats_floor(self, scene_dir, tmp_path):
        cfg = self.config(scene_dir, tmp_path)
        with pytest.raises(ValueError):
            run_bench(cfg, repeats=2)
