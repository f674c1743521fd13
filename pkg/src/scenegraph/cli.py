"""Command-line interface: gen, train, run, eval, bench.

Exit codes: 0 ok, 1 usage or config problem, 2 data error, 3 numeric error.
A JSON config file (flag --config or env SCENEGRAPH_CONFIG) supplies
defaults for pipeline and training settings; explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__, datagen, evaluation, spn, training
from .config import (
    CONFIG_ENV_VAR,
    ModelConfig,
    PipelineConfig,
    TrainConfig,
    load_config_file,
)
from .errors import ConfigError, DataError, NumericError
from .fusion import export_graph, load_graph
from .pipeline import bench as bench_pipeline
from .pipeline import build_model_config, run_pipeline


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="scenegraph",
                     description="Incremental semantic scene-graph engine")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="JSON config file "
                        f"(or env {CONFIG_ENV_VAR})")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="write synthetic scene streams")
    gen.add_argument("--out", required=True)
    gen.add_argument("--scenes", type=int, default=20)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--frames", type=int, default=12)
    gen.add_argument("--predicates", choices=("desk", "full"), default="desk")

    train = sub.add_parser("train", help="train a checkpoint on scene files")
    train.add_argument("--data", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--epochs", type=int)
    train.add_argument("--seed", type=int)
    train.add_argument("--scale", choices=("desk", "paper", "tiny"),
                       default="desk")
    train.add_argument("--holdout", type=int, default=0,
                       help="skip the first N scenes (reserved for eval)")
    train.add_argument("--curve", help="loss curve CSV path")
    _pipeline_flags(train)

    run = sub.add_parser("run", help="run the engine over a stream")
    run.add_argument("--stream", required=True)
    run.add_argument("--ckpt", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--report")
    run.add_argument("--seed", type=int)
    run.add_argument("--async", dest="use_async", action="store_true")
    _pipeline_flags(run)

    ev = sub.add_parser("eval", help="score predictions against ground truth")
    src = ev.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="directory of scene stream/gt pairs")
    src.add_argument("--stream", help="single stream file")
    ev.add_argument("--gt", help="ground truth for --stream")
    ev.add_argument("--ckpt")
    ev.add_argument("--graph", help="pre-exported graph (single scene)")
    ev.add_argument("--out", help="report JSON path")
    ev.add_argument("--csv", help="per-class CSV path")
    ev.add_argument("--holdout", type=int, default=0,
                    help="evaluate only the first N scenes of --data")
    ev.add_argument("--seed", type=int)
    _pipeline_flags(ev)

    bn = sub.add_parser("bench", help="latency and recomputation report")
    bn.add_argument("--stream", required=True)
    bn.add_argument("--ckpt", required=True)
    bn.add_argument("--repeat", type=int, default=3)
    bn.add_argument("--out")
    bn.add_argument("--seed", type=int)
    _pipeline_flags(bn)
    return parser


def _pipeline_flags(parser) -> None:
    parser.add_argument("--threshold", type=float,
                        help="proximity threshold in meters")
    parser.add_argument("--min-points", type=int, dest="min_points")
    parser.add_argument("--stale-frames", type=int, dest="stale_frames")
    parser.add_argument("--resize-ratio", type=float, dest="resize_ratio")


def _pipeline_config(args, file_cfg: dict, model_cfg: ModelConfig | None,
                     sync: bool = True) -> PipelineConfig:
    base = dict(file_cfg.get("pipeline", {}))
    if getattr(args, "threshold", None) is not None:
        base["proximity_threshold"] = args.threshold
    if getattr(args, "min_points", None) is not None:
        base["min_segment_points"] = args.min_points
    if getattr(args, "stale_frames", None) is not None:
        base["stale_frames"] = args.stale_frames
    if getattr(args, "resize_ratio", None) is not None:
        base["resize_ratio"] = args.resize_ratio
    if getattr(args, "seed", None) is not None:
        base["seed"] = args.seed
    base.setdefault("min_segment_points", 64)
    if model_cfg is not None:
        base.setdefault("n_sample_points", model_cfg.n_sample_points)
    base["sync"] = sync
    return PipelineConfig(**base)


# -- commands -------------------------------------------------------------------


def _cmd_gen(args, file_cfg) -> int:
    os.makedirs(args.out, exist_ok=True)
    predicates = (datagen.DESK_PREDICATES if args.predicates == "desk"
                  else datagen.FULL_PREDICATES)
    rng = np.random.default_rng(args.seed)
    for k in range(args.scenes):
        spec = datagen.random_desk_spec(rng, predicate_names=predicates,
                                        n_frames=args.frames)
        frames, gt = datagen.generate_scene(spec, rng)
        stem = os.path.join(args.out, f"scene_{k:03d}")
        datagen.write_stream(stem + ".stream.jsonl", frames)
        datagen.write_gt(stem + ".gt.json", gt)
        print(f"wrote {stem}.stream.jsonl "
              f"({len(frames)} frames, {gt.points.shape[0]} points)")
    return 0


def _cmd_train(args, file_cfg) -> int:
    pipe_cfg = _pipeline_config(args, file_cfg, None)
    scenes = datagen.load_labeled_scenes(args.data,
                                         pipe_cfg.proximity_threshold,
                                         pipe_cfg.min_segment_points)
    if args.holdout:
        if args.holdout >= len(scenes):
            raise ConfigError("holdout leaves no training scenes")
        scenes = scenes[args.holdout:]
    gt = scenes[0].gt
    train_over = dict(file_cfg.get("train", {}))
    if args.epochs is not None:
        train_over["epochs"] = args.epochs
    if args.seed is not None:
        train_over["seed"] = args.seed
    train_cfg = TrainConfig(**train_over)
    model_over = dict(file_cfg.get("model", {}))
    model_cfg = build_model_config(gt.class_names, gt.predicate_names,
                                   scale=args.scale, **model_over)
    print(f"training on {len(scenes)} scenes, {model_cfg.n_classes} classes, "
          f"{model_cfg.n_predicates} predicates, {train_cfg.epochs} epochs")
    params, opt_state, curve = training.train(
        [s.training for s in scenes], model_cfg, train_cfg,
        log=lambda row: print(f"epoch {row['epoch']:3d}  "
                              f"loss {row['loss']:.4f}  "
                              f"obj {row['loss_obj']:.4f}  "
                              f"pred {row['loss_pred']:.4f}"))
    spn.save_checkpoint(args.out, params, opt_state.as_arrays(),
                        {"train_config": train_cfg.to_dict(),
                         "optimizer_step": opt_state.step_count,
                         "scenes": len(scenes)})
    curve_path = args.curve or args.out + ".curve.csv"
    with open(curve_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "loss", "loss_obj",
                                                "loss_pred"])
        writer.writeheader()
        writer.writerows(curve)
    print(f"wrote {args.out} and {curve_path}")
    return 0


def _cmd_run(args, file_cfg) -> int:
    params, _, _ = spn.load_checkpoint(args.ckpt)
    pipe_cfg = _pipeline_config(args, file_cfg, params.config,
                                sync=not args.use_async)
    frames = datagen.read_stream(args.stream)
    result = run_pipeline(frames, params, pipe_cfg)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(export_graph(result.fused))
    print(f"wrote {args.out} "
          f"({len(result.fused.node_dists)} nodes, "
          f"{len(result.fused.edge_dists)} edges, "
          f"{result.report['prediction_passes']} prediction passes)")
    if args.report:
        evaluation.write_report_json(result.report, args.report)
        print(f"wrote {args.report}")
    return 0


def _eval_single(labeled, args, file_cfg, params):
    if params is not None:
        pipe_cfg = _pipeline_config(args, file_cfg, params.config)
        frames = datagen.read_stream(args.stream) if args.stream else None
        result = run_pipeline(frames, params, pipe_cfg)
        fused = result.fused
    else:
        with open(args.graph, "r", encoding="utf-8") as fh:
            fused = load_graph(fh.read())
    node_probs, edge_probs = evaluation.probs_from_fused(fused)
    partition = fused.cluster_instances()
    return evaluation.evaluate_scene(labeled, node_probs, edge_probs, partition)


def _cmd_eval(args, file_cfg) -> int:
    params = None
    if args.ckpt:
        params, _, _ = spn.load_checkpoint(args.ckpt)
    elif not args.graph:
        raise _UsageError("eval needs --ckpt or --graph")
    pipe_cfg = _pipeline_config(args, file_cfg,
                                params.config if params else None)
    if args.stream:
        if not args.gt:
            raise _UsageError("--stream needs --gt")
        frames = datagen.read_stream(args.stream)
        gt = datagen.read_gt(args.gt)
        labeled = datagen.build_labeled_scene(frames, gt,
                                              pipe_cfg.proximity_threshold,
                                              pipe_cfg.min_segment_points)
        report = _eval_single(labeled, args, file_cfg, params)
        class_names = gt.class_names
    else:
        if args.graph:
            raise _UsageError("--graph only works with a single --stream")
        pairs = datagen.scene_file_pairs(args.data)
        if args.holdout:
            pairs = pairs[:args.holdout]
        reports = []
        class_names = None
        for stream_path, gt_path in pairs:
            frames = datagen.read_stream(stream_path)
            gt = datagen.read_gt(gt_path)
            class_names = gt.class_names
            labeled = datagen.build_labeled_scene(
                frames, gt, pipe_cfg.proximity_threshold,
                pipe_cfg.min_segment_points)
            result = run_pipeline(frames, params, pipe_cfg)
            node_probs, edge_probs = evaluation.probs_from_fused(result.fused)
            reports.append(evaluation.evaluate_scene(
                labeled, node_probs, edge_probs,
                result.fused.cluster_instances()))
            print(f"evaluated {os.path.basename(stream_path)}: "
                  f"node acc {reports[-1]['node_accuracy']:.3f}, "
                  f"PQ {reports[-1]['panoptic_nn']['all']['pq']:.3f}")
        report = evaluation.average_reports(reports)
    print(json.dumps({k: report[k] for k in
                      ("node_accuracy", "predicate_accuracy",
                       "object_recall", "predicate_recall",
                       "relationship_recall")}, indent=1, sort_keys=True))
    print(f"segment mIoU {report['segment_iou']['mean']:.3f}  "
          f"point mIoU(nn) {report['point_iou_nn']['mean']:.3f}  "
          f"PQ(nn) {report['panoptic_nn']['all']['pq']:.3f}")
    if args.out:
        evaluation.write_report_json(report, args.out)
        print(f"wrote {args.out}")
    if args.csv:
        evaluation.write_per_class_csv(report, class_names, args.csv)
        print(f"wrote {args.csv}")
    return 0


def _cmd_bench(args, file_cfg) -> int:
    params, _, _ = spn.load_checkpoint(args.ckpt)
    pipe_cfg = _pipeline_config(args, file_cfg, params.config)
    frames = datagen.read_stream(args.stream)
    report = bench_pipeline(frames, params, pipe_cfg, repeat=args.repeat)
    print(f"{'stage':<16}{'mean ms':>10}{'p95 ms':>10}")
    for stage, row in report["stages"].items():
        print(f"{stage:<16}{row['mean_ms']:>10.3f}{row['p95_ms']:>10.3f}")
    per_pass = report["computations_per_pass"]
    if per_pass:
        print("avg computations per prediction pass:")
        print(f"  node features  {per_pass['node_feature']:.2f}")
        print(f"  edge features  {per_pass['edge_feature']:.2f}")
        for layer, (n, e) in enumerate(zip(per_pass["gnn_nodes"],
                                           per_pass["gnn_edges"]), start=1):
            print(f"  gnn layer {layer}    {n:.2f} nodes, {e:.2f} edges")
        print(f"  classified     {per_pass['classify_nodes']:.2f} nodes, "
              f"{per_pass['classify_edges']:.2f} edges")
    if args.out:
        evaluation.write_report_json(report, args.out)
        print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "run": _cmd_run,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        file_cfg = load_config_file(args.config)
        return _COMMANDS[args.command](args, file_cfg)
    except (_UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
