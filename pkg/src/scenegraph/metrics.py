"""Evaluation metrics: top-k recall, IoU, panoptic quality.

All ranking is deterministic: ties are broken by ascending class index (and
lexicographic triplet order for relationship scoring), so repeated runs
produce identical numbers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DataError


# -- top-k recall ---------------------------------------------------------------


def rank_of_label(probs: np.ndarray, label: int) -> int:
    """1-based rank of `label` when classes are sorted by descending
    probability, ties broken by ascending class index."""
    p = np.asarray(probs)
    target = p[label]
    better = int((p > target).sum())
    tied_before = int((p[:label] == target).sum())
    return 1 + better + tied_before


def object_recall_at_k(node_probs: dict[int, np.ndarray],
                       node_labels: dict[int, int], k: int) -> float:
    """Fraction of labeled nodes whose true class ranks within the top k."""
    if k < 1:
        raise DataError("k must be >= 1")
    hits = total = 0
    for node_id, label in node_labels.items():
        if label < 0 or node_id not in node_probs:
            continue
        total += 1
        if rank_of_label(node_probs[node_id], label) <= k:
            hits += 1
    return hits / total if total else 0.0


def predicate_recall_at_k(edge_probs: dict[tuple[int, int], np.ndarray],
                          edge_labels: dict[tuple[int, int], int], k: int,
                          exclude_label: int | None = None) -> float:
    """Fraction of labeled directed edges whose true predicate ranks within
    the top k; `exclude_label` (usually `none`) drops those edges."""
    if k < 1:
        raise DataError("k must be >= 1")
    hits = total = 0
    for edge, label in edge_labels.items():
        if label < 0 or edge not in edge_probs:
            continue
        if exclude_label is not None and label == exclude_label:
            continue
        total += 1
        if rank_of_label(edge_probs[edge], label) <= k:
            hits += 1
    return hits / total if total else 0.0


def relationship_rank(subj_probs: np.ndarray, pred_probs: np.ndarray,
                      obj_probs: np.ndarray,
                      triplet: tuple[int, int, int]) -> int:
    """1-based rank of the ground-truth (subject class, predicate, object
    class) triplet among all candidate triplets for one edge, scored by the
    probability product; ties broken by ascending triplet tuple."""
    cs, cp, co = triplet
    scores = np.einsum("a,p,b->apb", subj_probs, pred_probs, obj_probs)
    target = scores[cs, cp, co]
    better = int((scores > target).sum())
    flat = scores.ravel()
    tied = np.nonzero(flat == target)[0]
    my_flat = np.ravel_multi_index((cs, cp, co), scores.shape)
    tied_before = int((tied < my_flat).sum())
    return 1 + better + tied_before


def relationship_recall_at_k(node_probs: dict[int, np.ndarray],
                             edge_probs: dict[tuple[int, int], np.ndarray],
                             gt_triplets: dict[tuple[int, int], tuple[int, int, int]],
                             k: int) -> float:
    """Per ground-truth triplet on an edge, score a hit when the triplet
    ranks within the top k candidates of that edge."""
    if k < 1:
        raise DataError("k must be >= 1")
    hits = total = 0
    for (i, j), triplet in gt_triplets.items():
        if (i, j) not in edge_probs or i not in node_probs or j not in node_probs:
            continue
        total += 1
        rank = relationship_rank(node_probs[i], edge_probs[(i, j)],
                                 node_probs[j], triplet)
        if rank <= k:
            hits += 1
    return hits / total if total else 0.0


# -- IoU ------------------------------------------------------------------------


def iou_per_class(pred: np.ndarray, gt: np.ndarray) -> dict[int, float]:
    """|intersection| / |union| per class, over classes present in either
    labeling. Arrays must be aligned element-for-element."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DataError("label arrays must be aligned")
    out = {}
    for cls in np.union1d(np.unique(pred), np.unique(gt)):
        if cls < 0:
            continue
        p = pred == cls
        g = gt == cls
        union = int((p | g).sum())
        if union == 0:
            continue
        out[int(cls)] = int((p & g).sum()) / union
    return out


def mean_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean IoU over classes present in the ground truth."""
    per_class = iou_per_class(pred, gt)
    gt_classes = [int(c) for c in np.unique(gt) if c >= 0]
    if not gt_classes:
        return 0.0
    return float(np.mean([per_class.get(c, 0.0) for c in gt_classes]))


def transfer_labels(gt_points: np.ndarray, recon_points: np.ndarray,
                    recon_labels: np.ndarray, mode: str = "nn",
                    radius: float = 0.02) -> tuple[np.ndarray, np.ndarray]:
    """Carry per-point predictions onto the ground-truth point universe.

    mode "nn" maps every ground-truth point to its nearest reconstructed
    point; mode "skip" only keeps points with a reconstruction within
    `radius` (the returned mask marks them).
    """
    if mode not in ("nn", "skip"):
        raise DataError(f"unknown transfer mode {mode!r}")
    if recon_points.shape[0] == 0:
        n = gt_points.shape[0]
        return np.full(n, -1, dtype=recon_labels.dtype), np.zeros(n, dtype=bool)
    tree = cKDTree(recon_points)
    if mode == "nn":
        _, idx = tree.query(gt_points, k=1)
        return recon_labels[idx], np.ones(gt_points.shape[0], dtype=bool)
    dist, idx = tree.query(gt_points, k=1, distance_upper_bound=radius)
    mask = np.isfinite(dist) & (dist <= radius)
    labels = np.full(gt_points.shape[0], -1, dtype=recon_labels.dtype)
    labels[mask] = recon_labels[idx[mask]]
    return labels, mask


# -- panoptic quality -------------------------------------------------------------


@dataclass
class ClassPQ:
    tp: int
    fp: int
    fn: int
    sq: float
    rq: float
    pq: float


@dataclass
class PQReport:
    per_class: dict[int, ClassPQ]
    all: tuple[float, float, float]      # (pq, sq, rq)
    things: tuple[float, float, float]
    stuff: tuple[float, float, float]

    def to_dict(self) -> dict:
        return {
            "per_class": {str(c): vars(v) for c, v in sorted(self.per_class.items())},
            "all": dict(zip(("pq", "sq", "rq"), self.all)),
            "things": dict(zip(("pq", "sq", "rq"), self.things)),
            "stuff": dict(zip(("pq", "sq", "rq"), self.stuff)),
        }


def _merge_stuff(instance: np.ndarray, classes: np.ndarray,
                 stuff: set[int]) -> np.ndarray:
    """Stuff classes count as a single instance per class."""
    out = instance.astype(np.int64).copy()
    for cls in stuff:
        out[classes == cls] = -1000 - cls
    return out


def panoptic_quality(pred_instance: np.ndarray, pred_class: np.ndarray,
                     gt_instance: np.ndarray, gt_class: np.ndarray,
                     stuff: set[int] = frozenset(),
                     iou_threshold: float = 0.5) -> PQReport:
    """Segment matching at IoU > threshold with identical class.

    With threshold 0.5 the matching is unique; this is asserted. Per class:
    SQ is the mean IoU of matches, RQ = TP / (TP + FP/2 + FN/2), PQ = SQ*RQ.
    Aggregates are means over classes that appear at all.
    """
    pred_instance = _merge_stuff(np.asarray(pred_instance),
                                 np.asarray(pred_class), stuff)
    gt_instance = _merge_stuff(np.asarray(gt_instance),
                               np.asarray(gt_class), stuff)
    pred_class = np.asarray(pred_class)
    gt_class = np.asarray(gt_class)

    def inventory(instance, classes):
        sizes = {}
        inst_class = {}
        for inst in np.unique(instance):
            mask = instance == inst
            sizes[int(inst)] = int(mask.sum())
            values, counts = np.unique(classes[mask], return_counts=True)
            inst_class[int(inst)] = int(values[counts.argmax()])
        return sizes, inst_class

    pred_sizes, pred_cls = inventory(pred_instance, pred_class)
    gt_sizes, gt_cls = inventory(gt_instance, gt_class)

    pairs: dict[tuple[int, int], int] = {}
    stacked = np.stack([gt_instance, pred_instance], axis=1)
    uniq, counts = np.unique(stacked, axis=0, return_counts=True)
    for (g, p), c in zip(uniq, counts):
        pairs[(int(g), int(p))] = int(c)

    classes_seen = sorted(set(pred_cls.values()) | set(gt_cls.values()))
    per_class: dict[int, ClassPQ] = {}
    for cls in classes_seen:
        gt_of_cls = [g for g, c in gt_cls.items() if c == cls]
        pred_of_cls = [p for p, c in pred_cls.items() if c == cls]
        matched_gt: set[int] = set()
        matched_pred: set[int] = set()
        ious = []
        for (g, p), inter in pairs.items():
            if g not in gt_of_cls or p not in pred_of_cls:
                continue
            iou = inter / (gt_sizes[g] + pred_sizes[p] - inter)
            if iou > iou_threshold:
                assert g not in matched_gt and p not in matched_pred, \
                    "matching above 0.5 IoU must be unique"
                matched_gt.add(g)
                matched_pred.add(p)
                ious.append(iou)
        tp = len(ious)
        fp = len(pred_of_cls) - tp
        fn = len(gt_of_cls) - tp
        if tp + fp + fn == 0:
            continue
        sq = float(np.mean(ious)) if ious else 0.0
        rq = tp / (tp + 0.5 * fp + 0.5 * fn)
        per_class[cls] = ClassPQ(tp=tp, fp=fp, fn=fn, sq=sq, rq=rq, pq=sq * rq)

    def aggregate(class_ids):
        rows = [per_class[c] for c in class_ids if c in per_class]
        if not rows:
            return (0.0, 0.0, 0.0)
        return (float(np.mean([r.pq for r in rows])),
                float(np.mean([r.sq for r in rows])),
                float(np.mean([r.rq for r in rows])))

    all_ids = sorted(per_class)
    things_ids = [c for c in all_ids if c not in stuff]
    stuff_ids = [c for c in all_ids if c in stuff]
    return PQReport(per_class=per_class,
                    all=aggregate(all_ids),
                    things=aggregate(things_ids),
                    stuff=aggregate(stuff_ids))
