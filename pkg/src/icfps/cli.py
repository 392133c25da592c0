"""Command-line entry point.

Subcommands: synth | partition | sample | train | icfps | eval | bench.
Exit codes: 0 success, 1 usage error (help printed), 2 data/validation
error (failing path and reason printed to stderr).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import run_bench
from .blocks import DEFAULT_BLOCK_SIZE, DEFAULT_S_MAX, partition
from .ciss import CenterSet, PRESETS, icfps
from .cloud import (
    FormatError,
    ValidationError,
    load_cloud,
    load_labels,
    save_cloud,
    save_labels,
    PointCloud,
)
from .rng import Rng
from .samplers import f_fps, fps, grid_centroid_sample, random_sample
from .synth import SCENE_PRESETS, evaluate, synth
from .train import TrainConfig, train_lfdbf
from .weights import IcfpsWeights


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


def cli_dispatch(argv) -> int:
    parser = _build_parser()
    if not argv:
        parser.print_help()
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse handled --help (code 0) or a usage error (code 2 -> 1)
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except (FileNotFoundError, OSError, FormatError, ValidationError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icfps",
        description="Point-cloud downsampling toolkit: synthesis, training, "
        "sampling, and benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labelled scene")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--preset", choices=sorted(SCENE_PRESETS), default="small")
    p.add_argument("--out-cloud", required=True)
    p.add_argument("--out-labels", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("partition", help="partition a cloud into blocks")
    p.add_argument("--cloud", required=True)
    p.add_argument("--format", choices=["pcf1", "kitti_bin", "xyz_ascii"], default="pcf1")
    p.add_argument("--block-size", default=None, help="sx,sy,sz meters")
    p.add_argument("--s-max", type=int, default=DEFAULT_S_MAX)
    p.add_argument("--out", default=None, help="write grid JSON here")
    p.set_defaults(func=_cmd_partition)

    p = sub.add_parser("sample", help="run a baseline sampler")
    p.add_argument("--cloud", required=True)
    p.add_argument("--format", choices=["pcf1", "kitti_bin", "xyz_ascii"], default="pcf1")
    p.add_argument("--method", choices=["fps", "ffps", "random", "grid-centroid"], required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--lam", "--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--out", required=True, help="sample JSON output")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("train", help="train the background filter on scenes")
    p.add_argument("--scenes", required=True, help="directory of *.pcf1 + labels")
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--no-ddfl-weights", action="store_true")
    p.add_argument("--out-weights", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("icfps", help="run the full sampling pipeline")
    p.add_argument("--cloud", required=True)
    p.add_argument("--format", choices=["pcf1", "kitti_bin", "xyz_ascii"], default="pcf1")
    p.add_argument("--weights", required=True)
    p.add_argument("--preset", choices=sorted(PRESETS), default="s")
    p.add_argument("--m1", type=int, default=None, help="override preset m1")
    p.add_argument("--m2", type=int, default=None, help="override preset m2")
    p.add_argument("--out", required=True, help="centers pcf1 (position + feature rows)")
    p.add_argument("--out-meta", default=None, help="center metadata JSON")
    p.add_argument("--threads", type=int, default=0)
    p.set_defaults(func=_cmd_icfps)

    p = sub.add_parser("eval", help="score a sample/center file against labels")
    p.add_argument("--samples", required=True, help="sample JSON or center meta JSON")
    p.add_argument("--cloud", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="run the benchmark harness")
    p.add_argument("--config", required=True)
    p.add_argument("--out-prefix", default=None)
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--warmups", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_bench)
    return parser


def _cmd_synth(args) -> int:
    spec = SCENE_PRESETS[args.preset](args.seed)
    cloud, labels = synth(spec)
    save_cloud(cloud, args.out_cloud)
    save_labels(labels, args.out_labels)
    print(f"wrote {cloud.n} points to {args.out_cloud} and labels to {args.out_labels}")
    return 0


def _parse_block_size(text):
    if text is None:
        return DEFAULT_BLOCK_SIZE
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"block size needs 3 comma-separated extents, got {text!r}")
    return tuple(parts)


def _cmd_partition(args) -> int:
    cloud = load_cloud(args.cloud, format=args.format)
    grid = partition(cloud, block_size=_parse_block_size(args.block_size), s_max=args.s_max)
    if args.out:
        Path(args.out).write_text(json.dumps(grid.to_debug_dict()))
        print(f"wrote grid with {grid.m} blocks to {args.out}")
    else:
        print(f"{grid.m} blocks, max count {int(grid.counts.max(initial=0))}")
    return 0


def _cmd_sample(args) -> int:
    cloud = load_cloud(args.cloud, format=args.format)
    index_space = "points"
    if args.method == "fps":
        result = fps(cloud, args.m, args.start)
    elif args.method == "ffps":
        feats = cloud.points[:, 3:] if cloud.c > 3 else cloud.xyz
        result = f_fps(cloud.xyz, feats, args.m, args.lam, args.start)
    elif args.method == "random":
        result = random_sample(cloud, args.m, Rng(args.seed))
    else:
        result = grid_centroid_sample(partition(cloud), args.m)
        index_space = "blocks"
    doc = {
        "method": args.method,
        "m": args.m,
        "index_space": index_space,
        "short_count": result.short_count,
        "indices": [int(v) for v in result.indices],
        "positions": [[float(x) for x in row] for row in result.positions],
    }
    Path(args.out).write_text(json.dumps(doc))
    print(f"wrote {len(result.indices)} samples to {args.out}")
    return 0


def _load_scene_dir(scene_dir: Path):
    clouds = sorted(scene_dir.glob("*.pcf1"))
    if not clouds:
        raise FileNotFoundError(f"no *.pcf1 scenes under {scene_dir}")
    scenes = []
    for cloud_path in clouds:
        labels_path = cloud_path.parent / (cloud_path.stem + ".labels.json")
        if not labels_path.exists():
            raise FileNotFoundError(f"labels not found for {cloud_path}: {labels_path}")
        cloud = load_cloud(cloud_path)
        scenes.append((cloud, load_labels(labels_path, cloud)))
    return scenes


def _cmd_train(args) -> int:
    scenes = _load_scene_dir(Path(args.scenes))
    hyper = TrainConfig(
        epochs=args.epochs,
        lr=args.lr,
        val_fraction=args.val_fraction,
        use_ddfl_weights=not args.no_ddfl_weights,
    )
    weights, history = train_lfdbf(scenes, hyper, Rng(args.seed))
    weights.save(args.out_weights)
    final = history[-1] if history else {}
    print(
        f"trained on {len(scenes)} scenes for {len(history)} epochs: "
        f"recall={final.get('val_recall', float('nan')):.3f} "
        f"rejection={final.get('val_rejection', float('nan')):.3f}; "
        f"weights -> {args.out_weights}"
    )
    return 0


def _cmd_icfps(args) -> int:
    cloud = load_cloud(args.cloud, format=args.format)
    weights = IcfpsWeights.load(args.weights)
    m1, m2 = PRESETS[args.preset]
    if args.m1 is not None:
        m1 = args.m1
    if args.m2 is not None:
        m2 = args.m2
    centers = icfps(cloud, weights, m1, m2)
    feature_cloud = PointCloud(points=centers.features.astype(np.float32))
    save_cloud(feature_cloud, args.out)
    if args.out_meta:
        meta = centers.meta_dict()
        meta["positions"] = [[float(x) for x in row] for row in centers.positions]
        Path(args.out_meta).write_text(json.dumps(meta))
    print(
        f"selected {centers.m1_eff} centroids + {centers.m2_eff} instance points "
        f"-> {args.out}"
    )
    if centers.zero_foreground:
        print("warning: no foreground blocks; result is empty "
              "(fall back to fps explicitly if needed)", file=sys.stderr)
    return 0


def _cmd_eval(args) -> int:
    cloud = load_cloud(args.cloud)
    labels = load_labels(args.labels, cloud)
    doc = json.loads(Path(args.samples).read_text())
    samples = _samples_from_doc(doc, args.samples)
    metrics = evaluate(samples, cloud, labels)
    payload = json.dumps(metrics.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(payload)
    print(payload)
    return 0


def _samples_from_doc(doc: dict, path):
    from .samplers import SampleResult

    if "origin_tags" in doc:
        tags = np.asarray(
            [0 if t == "centroid" else 1 for t in doc["origin_tags"]], dtype=np.int8
        )
        positions = np.asarray(doc["positions"], dtype=np.float64).reshape(-1, 3)
        return CenterSet(
            positions=positions,
            features=positions.copy(),
            origin_tags=tags,
            source_points=np.asarray(doc["source_points"], dtype=np.int64),
            source_block_keys=np.asarray(doc["source_block_keys"], dtype=np.int64).reshape(-1, 3),
            m1_eff=int(doc["m1_eff"]),
            m2_eff=int(doc["m2_eff"]),
            zero_foreground=bool(doc.get("zero_foreground", False)),
        )
    if "indices" in doc:
        if doc.get("index_space", "points") != "points":
            raise ValidationError(
                f"{path}: block-indexed samples cannot be re-evaluated from JSON"
            )
        indices = np.asarray(doc["indices"], dtype=np.int64)
        positions = np.asarray(doc["positions"], dtype=np.float64).reshape(-1, 3)
        return SampleResult(indices=indices, positions=positions)
    raise ValidationError(f"{path}: unrecognized samples document")


def _cmd_bench(args) -> int:
    report = run_bench(
        args.config,
        out_prefix=args.out_prefix,
        repeats=args.repeats,
        warmups=args.warmups,
        threads=args.threads,
        seed=args.seed,
    )
    for record in report["records"]:
        print(
            f"{record['method']:>14} on {record['scene']}: "
            f"median {record['median_ms']:.1f} ms "
            f"(min {record['min_ms']:.1f}, max {record['max_ms']:.1f})"
        )
    return 0


if __name__ == "__main__":
    main()
