"""Scene-level evaluation: wires fused predictions and labeled scenes into
the metric suite and emits JSON/CSV reports."""

from __future__ import annotations

import csv
import json

import numpy as np

from .datagen import STUFF_CLASSES, LabeledScene
from .fusion import FusedSceneGraph, InstancePartition, fresh
from .metrics import (
    iou_per_class,
    mean_iou,
    object_recall_at_k,
    panoptic_quality,
    predicate_recall_at_k,
    relationship_recall_at_k,
    transfer_labels,
)


def probs_from_fused(fused: FusedSceneGraph
                     ) -> tuple[dict[int, np.ndarray], dict[tuple[int, int], np.ndarray]]:
    node_probs = {i: d.probs for i, d in fused.node_dists.items()}
    edge_probs = {e: d.probs for e, d in fused.edge_dists.items()}
    return node_probs, edge_probs


def partition_from_probs(node_probs: dict[int, np.ndarray],
                         edge_probs: dict[tuple[int, int], np.ndarray],
                         class_names, predicate_names,
                         counts: dict[int, int] | None = None) -> InstancePartition:
    """Instance clustering for plain probability dicts (non-pipeline path)."""
    fused = FusedSceneGraph(class_names=tuple(class_names),
                            predicate_names=tuple(predicate_names))
    for i, probs in node_probs.items():
        fused.node_dists[i] = fresh(probs)
        fused.node_info[i] = {"count": (counts or {}).get(i, 1)}
    for e, probs in edge_probs.items():
        fused.edge_dists[e] = fresh(probs)
    return fused.cluster_instances()


def strict_accuracy(probs: dict, labels: dict, skip_label: int | None = None) -> float:
    """Argmax accuracy over labeled items; items without a prediction count
    as wrong."""
    hits = total = 0
    for key, label in labels.items():
        if label < 0 or (skip_label is not None and label == skip_label):
            continue
        total += 1
        if key in probs and int(np.argmax(probs[key])) == label:
            hits += 1
    return hits / total if total else 0.0


def majority_baseline(train_labels, eval_labels) -> float:
    """Accuracy on eval_labels of always predicting the most frequent
    training label."""
    train = [l for l in train_labels if l >= 0]
    ev = [l for l in eval_labels if l >= 0]
    if not train or not ev:
        return 0.0
    values, counts = np.unique(train, return_counts=True)
    majority = int(values[counts.argmax()])
    return float(np.mean([l == majority for l in ev]))


def _point_arrays(labeled: LabeledScene, node_probs, partition: InstancePartition):
    """Per-point predicted (instance, class) over the reconstructed cloud."""
    scene = labeled.training
    blocks = []
    inst_blocks = []
    cls_blocks = []
    for sid in sorted(scene.nodes):
        if sid not in node_probs or sid not in partition.node_to_instance:
            continue
        pts = scene.nodes[sid][:, :3]
        inst = partition.node_to_instance[sid]
        blocks.append(pts)
        inst_blocks.append(np.full(pts.shape[0], inst))
        cls_blocks.append(np.full(pts.shape[0], partition.instance_class[inst]))
    if not blocks:
        return (np.zeros((0, 3)), np.zeros(0, dtype=int), np.zeros(0, dtype=int))
    return (np.concatenate(blocks), np.concatenate(inst_blocks),
            np.concatenate(cls_blocks))


def evaluate_scene(labeled: LabeledScene,
                   node_probs: dict[int, np.ndarray],
                   edge_probs: dict[tuple[int, int], np.ndarray],
                   partition: InstancePartition | None = None,
                   stuff_names=STUFF_CLASSES) -> dict:
    """All metrics for one scene against its ground truth."""
    scene = labeled.training
    gt = labeled.gt
    class_names = gt.class_names
    predicate_names = gt.predicate_names
    none_idx = predicate_names.index("none")
    if partition is None:
        counts = {sid: pts.shape[0] for sid, pts in scene.nodes.items()}
        partition = partition_from_probs(node_probs, edge_probs, class_names,
                                         predicate_names, counts)
    stuff_ids = {class_names.index(c) for c in stuff_names if c in class_names}

    triplets = {}
    for (i, j), pred in scene.edge_labels.items():
        ci = scene.node_labels.get(i, -1)
        cj = scene.node_labels.get(j, -1)
        if pred != none_idx and ci >= 0 and cj >= 0:
            triplets[(i, j)] = (ci, pred, cj)

    seg_ids = [sid for sid in sorted(scene.nodes)
               if scene.node_labels.get(sid, -1) >= 0 and sid in node_probs]
    seg_pred = np.array([int(np.argmax(node_probs[sid])) for sid in seg_ids])
    seg_gt = np.array([scene.node_labels[sid] for sid in seg_ids])

    recon_pts, recon_inst, recon_cls = _point_arrays(labeled, node_probs, partition)
    gt_inst = gt.instance_ids
    gt_cls = gt.class_ids
    report: dict = {
        "node_accuracy": strict_accuracy(node_probs, scene.node_labels),
        "predicate_accuracy": strict_accuracy(edge_probs, scene.edge_labels),
        "object_recall": {str(k): object_recall_at_k(node_probs,
                                                     scene.node_labels, k)
                          for k in (1, 3)},
        "predicate_recall": {str(k): predicate_recall_at_k(
            edge_probs, scene.edge_labels, k, exclude_label=none_idx)
            for k in (1, 2)},
        "relationship_recall": {str(k): relationship_recall_at_k(
            node_probs, edge_probs, triplets, k) for k in (1, 3)},
        "segment_iou": {
            "mean": mean_iou(seg_pred, seg_gt) if seg_ids else 0.0,
            "per_class": {str(c): v for c, v in
                          iou_per_class(seg_pred, seg_gt).items()} if seg_ids else {},
        },
        "counts": {
            "segments": len(scene.nodes),
            "labeled_segments": sum(1 for l in scene.node_labels.values() if l >= 0),
            "directed_edges": 2 * len(scene.edges),
            "gt_relations": len(triplets),
            "instances": len(partition.members),
        },
    }
    for mode in ("nn", "skip"):
        cls_t, mask = transfer_labels(gt.points, recon_pts, recon_cls, mode=mode)
        inst_t, _ = transfer_labels(gt.points, recon_pts, recon_inst, mode=mode)
        sem_pred = cls_t[mask]
        sem_gt = gt_cls[mask]
        report[f"point_iou_{mode}"] = {
            "mean": mean_iou(sem_pred, sem_gt) if mask.any() else 0.0,
            "coverage": float(mask.mean()) if mask.size else 0.0,
        }
        if mask.any():
            pq = panoptic_quality(inst_t[mask], cls_t[mask],
                                  gt_inst[mask], gt_cls[mask], stuff=stuff_ids)
            report[f"panoptic_{mode}"] = pq.to_dict()
        else:
            report[f"panoptic_{mode}"] = {"all": {"pq": 0.0, "sq": 0.0, "rq": 0.0},
                                          "things": {}, "stuff": {}, "per_class": {}}
    return report


def average_reports(reports: list[dict]) -> dict:
    """Mean of numeric leaves across per-scene reports (dicts must share
    structure; per-class maps are averaged where keys coincide)."""
    if not reports:
        return {}

    def merge(values):
        if isinstance(values[0], dict):
            keys = set().union(*(v.keys() for v in values))
            return {k: merge([v[k] for v in values if k in v]) for k in sorted(keys)}
        if isinstance(values[0], (int, float)):
            return float(np.mean(values))
        return values[0]

    return merge(reports)


def write_report_json(report: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)


def write_per_class_csv(report: dict, class_names, path: str) -> None:
    """Flat per-class table: IoU and panoptic rows."""
    seg_iou = report.get("segment_iou", {}).get("per_class", {})
    pq = report.get("panoptic_nn", {}).get("per_class", {})
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "segment_iou", "pq", "sq", "rq"])
        for idx, name in enumerate(class_names):
            row = pq.get(str(idx), {})
            writer.writerow([
                name,
                f"{seg_iou.get(str(idx), '')}",
                f"{row.get('pq', '')}",
                f"{row.get('sq', '')}",
                f"{row.get('rq', '')}",
            ])
