"""The incremental engine: frame ingestion, prediction, fusion.

Two logical workers (matching the runtime split of the system): the map
worker ingests frame updates, freezes touched-segment snapshots and fuses
returned predictions; the prediction worker owns the neighbor graph plus
feature cache and turns flagged segments into Prediction values. In
synchronous mode both run interleaved on one thread and the output is
byte-reproducible; in asynchronous mode they run on two threads connected
by bounded queues, and a full input queue makes the map worker coalesce
pending updates instead of blocking.

A drain barrier at stream end guarantees every eligible segment has at
least one prediction before export.
"""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig, PipelineConfig
from .errors import DataError, NumericError
from .fusion import FusedSceneGraph
from .neighbor_graph import NeighborGraph
from .scene_map import FrameUpdate, SceneMap, SegmentState, freeze_segment
from .spn import (
    Prediction,
    RecomputeCounters,
    SpnParameters,
    prediction_from_cache,
    run_plan,
)

_SENTINEL = None


@dataclass
class FrameMessage:
    """What the map worker hands to the prediction worker for one frame."""

    frame: int
    states: list[SegmentState]
    removed: list[int]
    merges: list[tuple[int, int]]

    def coalesce(self, other: "FrameMessage") -> "FrameMessage":
        """Fold a newer message into this one (used under backpressure)."""
        by_id = {s.id: s for s in self.states}
        for s in other.states:
            by_id[s.id] = s
        return FrameMessage(
            frame=other.frame,
            states=[by_id[i] for i in sorted(by_id)],
            removed=self.removed + other.removed,
            merges=self.merges + other.merges,
        )


@dataclass
class StageStats:
    samples: dict[str, list[float]] = field(default_factory=dict)

    def add(self, stage: str, seconds: float) -> None:
        self.samples.setdefault(stage, []).append(seconds)

    def merge_timings(self, timings: dict[str, float]) -> None:
        for stage, seconds in timings.items():
            self.add(stage, seconds)

    def summary(self) -> dict:
        out = {}
        for stage, values in sorted(self.samples.items()):
            arr = np.asarray(values) * 1000.0
            out[stage] = {
                "mean_ms": float(arr.mean()),
                "p95_ms": float(np.percentile(arr, 95)),
                "total_ms": float(arr.sum()),
                "count": int(arr.size),
            }
        return out


class PredictionWorker:
    """Owns the neighbor graph and cache; turns frame messages into
    predictions."""

    def __init__(self, params: SpnParameters, config: PipelineConfig):
        self.params = params
        self.config = config
        self.graph = NeighborGraph(n_layers=params.config.n_layers)
        self.counters = RecomputeCounters()
        self.stats = StageStats()
        self.plan_sizes: list[dict] = []
        self.passes = 0

    def _execute(self, frame: int, flagged) -> Prediction | None:
        pending = self.graph.take_pending()
        t0 = time.perf_counter()
        plan = self.graph.mark_dirty_and_plan(pending)
        self.stats.add("plan", time.perf_counter() - t0)
        before = RecomputeCounters()
        timings: dict[str, float] = {}
        if not plan.is_empty():
            before = RecomputeCounters(
                node_feature=self.counters.node_feature,
                edge_feature=self.counters.edge_feature,
                gnn_nodes=list(self.counters.gnn_nodes),
                gnn_edges=list(self.counters.gnn_edges),
                classify_nodes=self.counters.classify_nodes,
                classify_edges=self.counters.classify_edges)
            run_plan(self.params, self.graph.states(), self.graph.adj, plan,
                     self.graph.cache, self.counters, timings)
            self.stats.merge_timings(timings)
            self.plan_sizes.append(plan.sizes())
            self._check_counters(before, plan)
        if not flagged:
            return None
        t0 = time.perf_counter()
        snapshot = self.graph.extract_subgraph(flagged)
        self.stats.add("extract", time.perf_counter() - t0)
        self.passes += 1
        prediction = prediction_from_cache(
            self.graph.cache, frame, snapshot.nodes.keys(),
            snapshot.directed_edges, snapshot.nodes)
        self.graph.note_predicted(snapshot.nodes.keys(), frame)
        return prediction

    def _check_counters(self, before: RecomputeCounters, plan) -> None:
        sizes = plan.sizes()
        self.counters.ensure_layers(self.params.config.n_layers)
        before.ensure_layers(self.params.config.n_layers)
        did = {
            "nodes": [self.counters.node_feature - before.node_feature]
                     + [a - b for a, b in zip(self.counters.gnn_nodes,
                                              before.gnn_nodes)],
            "edges": [self.counters.edge_feature - before.edge_feature]
                     + [a - b for a, b in zip(self.counters.gnn_edges,
                                              before.gnn_edges)],
        }
        if did != {"nodes": sizes["nodes"], "edges": sizes["edges"]}:
            raise NumericError(
                f"recomputation accounting mismatch: did {did}, planned {sizes}")

    def process(self, msg: FrameMessage) -> Prediction | None:
        cfg = self.config
        t0 = time.perf_counter()
        for src, dst in msg.merges:
            self.graph.apply_merge(src, dst)
        for node_id in msg.removed:
            self.graph.remove(node_id)
        for state in msg.states:
            self.graph.upsert(state)
        touched = [s.id for s in msg.states]
        if msg.frame % cfg.edge_sweep_interval == 0:
            self.graph.full_edge_sweep(cfg.proximity_threshold)
        else:
            self.graph.maintain_edges(touched, cfg.proximity_threshold)
        self.stats.add("graph_update", time.perf_counter() - t0)
        t0 = time.perf_counter()
        flagged = self.graph.flag_for_prediction(
            msg.frame, cfg.resize_ratio, cfg.stale_frames,
            cfg.min_segment_points)
        self.stats.add("flag", time.perf_counter() - t0)
        return self._execute(msg.frame, flagged)

    def drain(self, frame: int) -> Prediction | None:
        """Final pass: everything eligible that never got a prediction, or
        changed since its last one, is predicted once more."""
        flagged = []
        for i in self.graph.node_ids:
            entry = self.graph.entries[i]
            if entry.state.count < self.config.min_segment_points:
                continue
            if entry.last_predicted_frame is None or i in self.graph.pending_changed:
                flagged.append(i)
        return self._execute(frame, flagged)

    def report(self) -> dict:
        totals = self.counters.as_dict()
        per_pass = {}
        if self.passes:
            per_pass = {
                "node_feature": totals["node_feature"] / self.passes,
                "edge_feature": totals["edge_feature"] / self.passes,
                "gnn_nodes": [v / self.passes for v in totals["gnn_nodes"]],
                "gnn_edges": [v / self.passes for v in totals["gnn_edges"]],
                "classify_nodes": totals["classify_nodes"] / self.passes,
                "classify_edges": totals["classify_edges"] / self.passes,
            }
        return {
            "computations_total": totals,
            "computations_per_pass": per_pass,
            "prediction_passes": self.passes,
            "stages": self.stats.summary(),
        }


@dataclass
class PipelineResult:
    fused: FusedSceneGraph
    scene_map: SceneMap
    report: dict


def _freeze_touched(scene_map: SceneMap, touched, config: PipelineConfig
                    ) -> list[SegmentState]:
    return [freeze_segment(scene_map.segments[i], config.n_sample_points,
                           base_seed=config.seed) for i in touched]


def run_pipeline(frames: list[FrameUpdate], params: SpnParameters,
                 config: PipelineConfig) -> PipelineResult:
    """Execute the full engine over a frame stream and return the fused
    graph plus the latency/recomputation report."""
    if config.sync:
        return _run_sync(frames, params, config)
    return _run_async(frames, params, config)


def _run_sync(frames, params, config) -> PipelineResult:
    scene_map = SceneMap()
    worker = PredictionWorker(params, config)
    fused = FusedSceneGraph(class_names=params.config.class_names,
                            predicate_names=params.config.predicate_names)
    fuse_stats = StageStats()
    last_frame = -1
    for update in frames:
        t0 = time.perf_counter()
        touched = scene_map.apply_frame(update)
        states = _freeze_touched(scene_map, touched, config)
        worker.stats.add("ingest", time.perf_counter() - t0)
        for src, dst in update.merges:
            fused.apply_merge(src, dst)
        for node_id in update.removals:
            fused.remove_node(node_id)
        msg = FrameMessage(frame=update.frame, states=states,
                           removed=list(update.removals),
                           merges=list(update.merges))
        prediction = worker.process(msg)
        if prediction is not None:
            t0 = time.perf_counter()
            fused.apply_prediction(prediction, scene_map.segments.keys())
            fuse_stats.add("fusion", time.perf_counter() - t0)
        last_frame = update.frame
    prediction = worker.drain(last_frame + 1)
    if prediction is not None:
        fused.apply_prediction(prediction, scene_map.segments.keys())
    report = worker.report()
    report["stages"].update(fuse_stats.summary())
    report["frames"] = len(frames)
    report["skipped_predictions"] = fused.skipped
    report["mode"] = "sync"
    return PipelineResult(fused=fused, scene_map=scene_map, report=report)


def _run_async(frames, params, config) -> PipelineResult:
    scene_map = SceneMap()
    worker = PredictionWorker(params, config)
    fused = FusedSceneGraph(class_names=params.config.class_names,
                            predicate_names=params.config.predicate_names)
    fuse_stats = StageStats()
    q_in: queue.Queue = queue.Queue(maxsize=config.queue_size)
    q_out: queue.Queue = queue.Queue()
    last_frame = [-1]

    def worker_loop():
        while True:
            msg = q_in.get()
            if msg is _SENTINEL:
                prediction = worker.drain(last_frame[0] + 1)
                if prediction is not None:
                    q_out.put(prediction)
                q_out.put(_SENTINEL)
                return
            prediction = worker.process(msg)
            if prediction is not None:
                q_out.put(prediction)

    thread = threading.Thread(target=worker_loop, name="prediction-worker",
                              daemon=True)
    thread.start()

    def fuse_available(block=False):
        while True:
            try:
                item = q_out.get(block=block, timeout=0.05 if block else None)
            except queue.Empty:
                return True
            if item is _SENTINEL:
                return False
            t0 = time.perf_counter()
            fused.apply_prediction(item, scene_map.segments.keys())
            fuse_stats.add("fusion", time.perf_counter() - t0)

    pending: FrameMessage | None = None
    for update in frames:
        t0 = time.perf_counter()
        touched = scene_map.apply_frame(update)
        states = _freeze_touched(scene_map, touched, config)
        worker.stats.add("ingest", time.perf_counter() - t0)
        for src, dst in update.merges:
            fused.apply_merge(src, dst)
        for node_id in update.removals:
            fused.remove_node(node_id)
        msg = FrameMessage(frame=update.frame, states=states,
                           removed=list(update.removals),
                           merges=list(update.merges))
        if pending is not None:
            msg = pending.coalesce(msg)
            pending = None
        try:
            q_in.put_nowait(msg)
        except queue.Full:
            pending = msg  # coalesce instead of blocking
        fuse_available(block=False)
        last_frame[0] = update.frame
    if pending is not None:
        q_in.put(pending)
    q_in.put(_SENTINEL)
    while fuse_available(block=True):
        pass
    thread.join(timeout=60)
    if thread.is_alive():
        raise DataError("prediction worker failed to drain")
    report = worker.report()
    report["stages"].update(fuse_stats.summary())
    report["frames"] = len(frames)
    report["skipped_predictions"] = fused.skipped
    report["mode"] = "async"
    return PipelineResult(fused=fused, scene_map=scene_map, report=report)


def bench(frames: list[FrameUpdate], params: SpnParameters,
          config: PipelineConfig, repeat: int = 3) -> dict:
    """Replay a stream several times and aggregate the per-stage report."""
    runs = []
    for _ in range(max(repeat, 1)):
        runs.append(run_pipeline(frames, params, config).report)
    stages: dict[str, dict] = {}
    for stage in runs[0]["stages"]:
        rows = [r["stages"][stage] for r in runs if stage in r["stages"]]
        stages[stage] = {
            "mean_ms": float(np.mean([r["mean_ms"] for r in rows])),
            "p95_ms": float(np.mean([r["p95_ms"] for r in rows])),
        }
    return {
        "repeats": len(runs),
        "frames": runs[0]["frames"],
        "stages": stages,
        "computations_per_pass": runs[0]["computations_per_pass"],
        "computations_total": runs[0]["computations_total"],
        "prediction_passes": runs[0]["prediction_passes"],
    }


def build_model_config(class_names, predicate_names, scale: str = "desk",
                       **overrides) -> ModelConfig:
    """Model preset helper shared by the CLI and tests."""
    if scale == "paper":
        return ModelConfig.paper_scale(class_names, predicate_names, **overrides)
    if scale == "desk":
        return ModelConfig.desk_scale(class_names, predicate_names, **overrides)
    if scale == "tiny":
        return ModelConfig.tiny(class_names, predicate_names, **overrides)
    raise DataError(f"unknown model scale {scale!r}")
