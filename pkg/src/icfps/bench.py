"""Benchmark harness: timed sampling runs with quality metrics.

A benchmark config is one JSON file naming scenes (payload files or
inline synthesis specs) and methods; every artifact is resolved before
any timing starts so missing files fail fast.  Each (scene, method) pair
runs ``warmups`` discarded passes then ``repeats`` timed passes; the
report records the full timing list, median/min/max, and the sampling
quality metrics of the final pass.  Reports are written as JSON and CSV
carrying identical values.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import platform
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ciss import PRESETS, icfps
from .cloud import LabelSet, PointCloud, load_cloud, load_labels
from .rng import Rng
from .samplers import f_fps, fps, grid_centroid_sample, random_sample
from .blocks import partition
from .synth import SCENE_PRESETS, SceneSpec, evaluate, synth
from .version import __version__
from .weights import IcfpsWeights

DEFAULT_REPEATS = 5
DEFAULT_WARMUPS = 2


@dataclass
class _Scene:
    name: str
    cloud: PointCloud
    labels: LabelSet | None


@dataclass
class _Method:
    name: str
    label: str
    params: dict
    weights: IcfpsWeights | None = None


def run_bench(
    config_path,
    out_prefix=None,
    repeats: int | None = None,
    warmups: int | None = None,
    threads: int | None = None,
    seed: int | None = None,
) -> dict:
    """Run the benchmark described by a config file; returns the report.

    Explicit arguments override config keys, which override defaults.
    When ``out_prefix`` is given the report is written to
    ``<prefix>.json`` and ``<prefix>.csv``.
    """
    config_path = Path(config_path)
    try:
        raw = json.loads(config_path.read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"bench config not found: {config_path}")
    base = config_path.parent
    config_hash = hashlib.sha256(
        json.dumps(raw, sort_keys=True).encode()
    ).hexdigest()[:16]

    repeats = repeats if repeats is not None else int(raw.get("repeats", DEFAULT_REPEATS))
    warmups = warmups if warmups is not None else int(raw.get("warmups", DEFAULT_WARMUPS))
    threads = threads if threads is not None else int(raw.get("threads", 0))
    seed = seed if seed is not None else int(raw.get("seed", 42))
    if repeats < 3:
        raise ValueError(f"repeats must be >= 3, got {repeats}")

    scenes = [_resolve_scene(entry, base, i) for i, entry in enumerate(raw.get("scenes", []))]
    methods = [_resolve_method(entry, base) for entry in raw.get("methods", [])]
    if not scenes:
        raise ValueError(f"{config_path}: no scenes configured")
    if not methods:
        raise ValueError(f"{config_path}: no methods configured")

    thread_count = threads if threads > 0 else (os.cpu_count() or 1)
    records = []
    for scene in scenes:
        for method in methods:
            records.append(
                _bench_one(scene, method, repeats, warmups, thread_count, seed, config_hash)
            )
    report = {
        "environment": {
            "cpu": platform.processor() or platform.machine(),
            "platform": platform.system(),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "toolkit_version": __version__,
        },
        "repeats": repeats,
        "warmups": warmups,
        "threads": thread_count,
        "seed": seed,
        "config_hash": config_hash,
        "records": records,
    }
    if out_prefix is not None:
        write_report(report, out_prefix)
    return report


def _bench_one(scene: _Scene, method: _Method, repeats, warmups, threads, seed, config_hash):
    runner = _make_runner(scene, method, seed)
    for _ in range(warmups):
        runner()
    times_ms = []
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = runner()
        times_ms.append((time.perf_counter() - t0) * 1e3)
    record = {
        "method": method.label,
        "scene": scene.name,
        "n": scene.cloud.n,
        **method.params,
        "times_ms": times_ms,
        "median_ms": statistics.median(times_ms),
        "min_ms": min(times_ms),
        "max_ms": max(times_ms),
        "threads": threads,
        "seed": seed,
        "config_hash": config_hash,
    }
    if scene.labels is not None:
        metrics = evaluate(result, scene.cloud, scene.labels)
        record["foreground_recall"] = metrics.foreground_recall
        record["instance_coverage"] = metrics.instance_coverage
    else:
        record["foreground_recall"] = None
        record["instance_coverage"] = None
    return record


def _make_runner(scene: _Scene, method: _Method, seed: int):
    cloud = scene.cloud
    if method.name == "fps":
        m = method.params["m"]
        return lambda: fps(cloud, m)
    if method.name == "ffps":
        m = method.params["m"]
        lam = method.params.get("lambda", 1.0)
        feats = cloud.points[:, 3:] if cloud.c > 3 else cloud.xyz
        return lambda: f_fps(cloud.xyz, feats, m, lam)
    if method.name == "random":
        m = method.params["m"]
        return lambda: random_sample(cloud, m, Rng(seed))
    if method.name == "grid-centroid":
        m = method.params["m"]
        return lambda: grid_centroid_sample(partition(cloud), m)
    if method.name == "ciss":
        m1, m2 = method.params["m1"], method.params["m2"]
        weights = method.weights
        return lambda: icfps(cloud, weights, m1, m2)
    raise ValueError(f"unknown method {method.name!r}")


def _resolve_scene(entry, base: Path, index: int) -> _Scene:
    if isinstance(entry, str):
        cloud_path = base / entry
        if not cloud_path.exists():
            raise FileNotFoundError(f"scene cloud not found: {cloud_path}")
        labels_path = cloud_path.parent / (cloud_path.stem + ".labels.json")
        labels = None
        if labels_path.exists():
            labels = load_labels(labels_path)
        cloud = load_cloud(cloud_path)
        if labels is not None:
            labels.validate_against(cloud)
        return _Scene(name=entry, cloud=cloud, labels=labels)
    if isinstance(entry, dict) and "cloud" in entry:
        cloud_path = base / entry["cloud"]
        if not cloud_path.exists():
            raise FileNotFoundError(f"scene cloud not found: {cloud_path}")
        cloud = load_cloud(cloud_path, format=entry.get("format", "pcf1"))
        labels = None
        if "labels" in entry:
            labels_path = base / entry["labels"]
            if not labels_path.exists():
                raise FileNotFoundError(f"scene labels not found: {labels_path}")
            labels = load_labels(labels_path, cloud)
        return _Scene(name=entry["cloud"], cloud=cloud, labels=labels)
    if isinstance(entry, dict) and "synth" in entry:
        spec_doc = dict(entry["synth"])
        preset = spec_doc.pop("preset", None)
        if preset is not None:
            spec = SCENE_PRESETS[preset](int(spec_doc.get("seed", 0)))
        else:
            if "instances" in spec_doc:
                spec_doc["instances"] = tuple(
                    (cls, tuple(rng)) for cls, rng in spec_doc["instances"]
                )
            spec = SceneSpec(**spec_doc)
        cloud, labels = synth(spec)
        name = f"synth[{preset or 'custom'}:{spec.seed}]"
        return _Scene(name=name, cloud=cloud, labels=labels)
    raise ValueError(f"scenes[{index}]: cannot interpret entry {entry!r}")


def _resolve_method(entry: dict, base: Path) -> _Method:
    name = str(entry.get("name", ""))
    if name in ("fps", "ffps", "random", "grid-centroid"):
        if "m" not in entry:
            raise ValueError(f"method {name!r} needs an 'm' count")
        params = {"m": int(entry["m"])}
        if name == "ffps" and "lambda" in entry:
            params["lambda"] = float(entry["lambda"])
        return _Method(name=name, label=name, params=params)
    if name in ("ciss", "icfps"):
        if "preset" in entry:
            m1, m2 = PRESETS[str(entry["preset"]).lower()]
            label = f"ciss-{entry['preset']}"
        else:
            m1, m2 = int(entry["m1"]), int(entry["m2"])
            label = "ciss"
        weights_path = base / entry["weights"]
        if not weights_path.exists():
            raise FileNotFoundError(f"weights not found: {weights_path}")
        weights = IcfpsWeights.load(weights_path)
        return _Method(
            name="ciss", label=label, params={"m1": m1, "m2": m2}, weights=weights
        )
    raise ValueError(f"unknown method {name!r}")


CSV_COLUMNS = [
    "method", "scene", "n", "m", "m1", "m2",
    "median_ms", "min_ms", "max_ms",
    "foreground_recall", "instance_coverage",
    "threads", "seed", "config_hash",
]


def write_report(report: dict, out_prefix) -> tuple[Path, Path]:
    """Write <prefix>.json and <prefix>.csv; both carry the same values."""
    out_prefix = Path(out_prefix)
    json_path = out_prefix.with_suffix(".json")
    csv_path = out_prefix.with_suffix(".csv")
    json_path.write_text(json.dumps(report, indent=2))
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for record in report["records"]:
            writer.writerow({col: record.get(col, "") for col in CSV_COLUMNS})
    return json_path, csv_path
