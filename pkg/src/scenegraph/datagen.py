"""Synthetic scene and stream generation plus ground-truth labeling.

A scene spec lists primitive objects (boxes, cylinders, planes) with
classes, support relations and an over-segmentation factor k; each object
is emitted as k segments. The stream reveals points progressively over
frames, optionally splits a segment into a provisional id that merges back
later, and can spawn short-lived noise segments that get removed, so all
three update paths are exercised.

Labeling matches segments to ground-truth instances by nearest-neighbor
point association (2 cm cap): a match must cover at least 50% of the
segment's points, and is rejected if the segment covers more than 10% of
any other instance's points. Segments matched to the same instance are
linked by `same part` in both directions; instance-level relations are
inherited by all member segments, and anything involving an unlabeled
segment is `none`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DataError
from .neighbor_graph import aabb_distance
from .scene_map import FrameUpdate, SceneMap, Segment, freeze_segment
from .training import TrainingScene

DESK_CLASSES = ("floor", "wall", "table", "chair", "item")
DESK_PREDICATES = ("none", "same part", "standing on", "attached to")
FULL_PREDICATES = ("none", "same part", "supported by", "attached to",
                   "standing on", "hanging on", "connected to", "part of")
STUFF_CLASSES = ("wall", "floor")

MATCH_RADIUS = 0.02
MIN_OVERLAP = 0.50
MAX_OTHER_COVER = 0.10

_CLASS_COLORS = {
    "floor": (0.55, 0.45, 0.35),
    "wall": (0.75, 0.75, 0.70),
    "table": (0.45, 0.30, 0.20),
    "chair": (0.20, 0.30, 0.55),
    "item": (0.60, 0.20, 0.25),
}


# -- primitive surface samplers ---------------------------------------------------


def _colored(pos: np.ndarray, normals: np.ndarray, class_name: str,
             rng: np.random.Generator) -> np.ndarray:
    base = np.array(_CLASS_COLORS.get(class_name, (0.5, 0.5, 0.5)))
    colors = np.clip(base + rng.normal(scale=0.04, size=pos.shape), 0.0, 1.0)
    return np.hstack([pos, normals, colors])


def sample_box(center, size, n, class_name, rng) -> np.ndarray:
    center = np.asarray(center, dtype=np.float64)
    size = np.asarray(size, dtype=np.float64)
    areas = np.array([size[1] * size[2], size[1] * size[2],
                      size[0] * size[2], size[0] * size[2],
                      size[0] * size[1], size[0] * size[1]])
    if areas.sum() <= 0:
        raise DataError("box has zero surface area")
    faces = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.random((n, 2)) - 0.5
    pos = np.empty((n, 3))
    normals = np.zeros((n, 3))
    for face in range(6):
        mask = faces == face
        axis = face // 2
        sign = 1.0 if face % 2 == 0 else -1.0
        others = [a for a in range(3) if a != axis]
        pos[mask, axis] = sign * 0.5 * size[axis]
        pos[mask, others[0]] = uv[mask, 0] * size[others[0]]
        pos[mask, others[1]] = uv[mask, 1] * size[others[1]]
        normals[mask, axis] = sign
    return _colored(pos + center, normals, class_name, rng)


def sample_cylinder(center, radius, height, n, class_name, rng) -> np.ndarray:
    center = np.asarray(center, dtype=np.float64)
    lateral = 2 * np.pi * radius * height
    cap = np.pi * radius * radius
    p = np.array([lateral, cap, cap])
    part = rng.choice(3, size=n, p=p / p.sum())
    theta = rng.random(n) * 2 * np.pi
    pos = np.empty((n, 3))
    normals = np.zeros((n, 3))
    side = part == 0
    pos[side, 0] = radius * np.cos(theta[side])
    pos[side, 1] = radius * np.sin(theta[side])
    pos[side, 2] = (rng.random(side.sum()) - 0.5) * height
    normals[side, 0] = np.cos(theta[side])
    normals[side, 1] = np.sin(theta[side])
    for which, sign in ((1, 1.0), (2, -1.0)):
        mask = part == which
        r = radius * np.sqrt(rng.random(mask.sum()))
        pos[mask, 0] = r * np.cos(theta[mask])
        pos[mask, 1] = r * np.sin(theta[mask])
        pos[mask, 2] = sign * 0.5 * height
        normals[mask, 2] = sign
    return _colored(pos + center, normals, class_name, rng)


def sample_plane(center, extent2, normal_axis, n, class_name, rng,
                 jitter=0.002) -> np.ndarray:
    """A thin rectangle orthogonal to `normal_axis` (0, 1 or 2)."""
    center = np.asarray(center, dtype=np.float64)
    others = [a for a in range(3) if a != normal_axis]
    pos = np.zeros((n, 3))
    uv = rng.random((n, 2)) - 0.5
    pos[:, others[0]] = uv[:, 0] * extent2[0]
    pos[:, others[1]] = uv[:, 1] * extent2[1]
    pos[:, normal_axis] = rng.normal(scale=jitter, size=n)
    normals = np.zeros((n, 3))
    normals[:, normal_axis] = 1.0
    return _colored(pos + center, normals, class_name, rng)


# -- scene specs --------------------------------------------------------------------


@dataclass
class ObjectSpec:
    """One primitive object to synthesize; emitted as k segments."""

    class_name: str
    shape: str                    # box | cylinder | plane
    center: tuple[float, float, float]
    size: tuple[float, float, float]  # plane: (a, b, axis); cylinder: (r, h, -)
    n_points: int = 300
    k: int = 1


@dataclass
class SceneSpec:
    class_names: tuple[str, ...] = DESK_CLASSES
    predicate_names: tuple[str, ...] = DESK_PREDICATES
    objects: list[ObjectSpec] = field(default_factory=list)
    relations: list[tuple[int, str, int]] = field(default_factory=list)
    n_frames: int = 12
    merge_prob: float = 0.35
    n_noise: int = 1

    def validate(self) -> None:
        if not self.objects:
            raise DataError("scene spec has no objects")
        if self.n_frames < 1:
            raise DataError("scene needs at least one frame")
        for obj in self.objects:
            if obj.class_name not in self.class_names:
                raise DataError(f"unknown class {obj.class_name!r}")
            if obj.shape not in ("box", "cylinder", "plane"):
                raise DataError(f"unknown shape {obj.shape!r}")
            if obj.k < 1 or obj.n_points < obj.k:
                raise DataError("bad over-segmentation factor")
        for a, pred, b in self.relations:
            if pred not in self.predicate_names:
                raise DataError(f"unknown predicate {pred!r}")
            if not (0 <= a < len(self.objects) and 0 <= b < len(self.objects)):
                raise DataError("relation references unknown object")


@dataclass
class GroundTruth:
    """Labeled point cloud plus instance classes and relations."""

    class_names: tuple[str, ...]
    predicate_names: tuple[str, ...]
    points: np.ndarray          # (M, 3)
    instance_ids: np.ndarray    # (M,)
    class_ids: np.ndarray       # (M,)
    instance_class: dict[int, int]
    relations: dict[tuple[int, int], int]

    def instance_sizes(self) -> dict[int, int]:
        ids, counts = np.unique(self.instance_ids, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}


def _sample_object(obj: ObjectSpec, rng) -> np.ndarray:
    if obj.shape == "box":
        return sample_box(obj.center, obj.size, obj.n_points, obj.class_name, rng)
    if obj.shape == "cylinder":
        return sample_cylinder(obj.center, obj.size[0], obj.size[1],
                               obj.n_points, obj.class_name, rng)
    return sample_plane(obj.center, obj.size[:2], int(obj.size[2]),
                        obj.n_points, obj.class_name, rng)


def split_segments(points: np.ndarray, k: int, rng,
                   min_part: int = 40, attempts: int = 25) -> list[np.ndarray]:
    """Voronoi split around k random seed points; retries until every part
    has min_part points (dropping k if necessary)."""
    n = points.shape[0]
    while k > 1:
        for _ in range(attempts):
            seeds = points[rng.choice(n, size=k, replace=False), :3]
            owner = np.linalg.norm(points[:, None, :3] - seeds[None], axis=2).argmin(axis=1)
            parts = [points[owner == i] for i in range(k)]
            if min(p.shape[0] for p in parts) >= min_part:
                return parts
        k -= 1
    return [points]


def generate_scene(spec: SceneSpec, rng: np.random.Generator
                   ) -> tuple[list[FrameUpdate], GroundTruth]:
    """Synthesize the frame stream and its ground truth.

    Every object point eventually appears in the stream; cumulative point
    counts per segment are non-decreasing. Provisional segments merge into
    their final id mid-stream; noise segments are not part of the ground
    truth and get removed before the stream ends.
    """
    spec.validate()
    class_index = {name: i for i, name in enumerate(spec.class_names)}
    pred_index = {name: i for i, name in enumerate(spec.predicate_names)}

    gt_points = []
    gt_instance = []
    gt_class = []
    instance_class = {}
    segments: list[tuple[int, np.ndarray]] = []
    next_seg = 1
    for inst_id, obj in enumerate(spec.objects):
        pts = _sample_object(obj, rng)
        gt_points.append(pts[:, :3])
        gt_instance.append(np.full(pts.shape[0], inst_id))
        gt_class.append(np.full(pts.shape[0], class_index[obj.class_name]))
        instance_class[inst_id] = class_index[obj.class_name]
        for part in split_segments(pts, obj.k, rng):
            segments.append((next_seg, part))
            next_seg += 1
    relations = {(a, b): pred_index[pred] for a, pred, b in spec.relations}
    gt = GroundTruth(
        class_names=spec.class_names,
        predicate_names=spec.predicate_names,
        points=np.concatenate(gt_points),
        instance_ids=np.concatenate(gt_instance).astype(np.int64),
        class_ids=np.concatenate(gt_class).astype(np.int64),
        instance_class=instance_class,
        relations=relations,
    )

    frames = [FrameUpdate(f) for f in range(spec.n_frames)]

    def spread(seg_id, pts, window):
        """Append shuffled chunks of pts to the frames in `window`."""
        order = rng.permutation(pts.shape[0])
        chunks = np.array_split(pts[order], len(window))
        for f, chunk in zip(window, chunks):
            if chunk.shape[0]:
                frames[f].additions.setdefault(seg_id, []).append(chunk)

    temp_id = 100000
    for seg_id, pts in segments:
        f0 = int(rng.integers(0, max(spec.n_frames // 2, 1)))
        f1 = int(rng.integers(f0, spec.n_frames))
        window = list(range(f0, f1 + 1))
        if len(window) >= 2 and rng.random() < spec.merge_prob:
            half = len(window) // 2
            n_first = pts.shape[0] // 2
            spread(temp_id, pts[:n_first], window[:half])
            spread(seg_id, pts[n_first:], window[half:])
            frames[window[half]].merges.append((temp_id, seg_id))
            temp_id += 1
        else:
            spread(seg_id, pts, window)

    for _ in range(spec.n_noise):
        if spec.n_frames < 3:
            break
        center = rng.random(3) * 3
        blob = center + rng.normal(scale=0.05, size=(24, 3))
        noise = np.hstack([blob, np.zeros((24, 3)), np.full((24, 3), 0.5)])
        f_in = int(rng.integers(0, spec.n_frames - 2))
        f_out = int(rng.integers(f_in + 1, spec.n_frames))
        frames[f_in].additions.setdefault(temp_id, []).append(noise)
        frames[f_out].removals.append(temp_id)
        temp_id += 1

    for frame in frames:
        frame.additions = {sid: np.concatenate(chunks)
                           for sid, chunks in frame.additions.items()}
    return frames, gt


def random_desk_spec(rng: np.random.Generator,
                     class_names=DESK_CLASSES,
                     predicate_names=DESK_PREDICATES,
                     n_frames: int = 12) -> SceneSpec:
    """A randomized desk-scale room: floor, a wall, a table with items,
    chairs, and one wall-mounted item."""
    objects = []
    relations = []

    def add(obj) -> int:
        objects.append(obj)
        return len(objects) - 1

    floor = add(ObjectSpec("floor", "plane", (0, 0, 0), (4.0, 4.0, 2),
                           n_points=700, k=int(rng.integers(1, 3))))
    wall = add(ObjectSpec("wall", "plane", (-2.0, 0, 1.1), (4.0, 2.2, 0),
                          n_points=500, k=int(rng.integers(1, 3))))
    relations.append((wall, "attached to", floor))

    th = float(rng.uniform(0.62, 0.78))
    tx, ty = float(rng.uniform(-0.8, 0.8)), float(rng.uniform(-0.8, 0.8))
    table = add(ObjectSpec("table", "box", (tx, ty, th),
                           (float(rng.uniform(1.0, 1.4)),
                            float(rng.uniform(0.7, 0.9)), 0.06),
                           n_points=450, k=int(rng.integers(2, 4))))
    relations.append((table, "standing on", floor))

    for side in range(int(rng.integers(1, 3))):
        sign = -1.0 if side == 0 else 1.0
        cx = tx + sign * float(rng.uniform(0.75, 0.95))
        chair = add(ObjectSpec("chair", "box",
                               (cx, ty + float(rng.uniform(-0.3, 0.3)), 0.25),
                               (0.45, 0.45, 0.5), n_points=280,
                               k=int(rng.integers(1, 3))))
        relations.append((chair, "standing on", floor))

    for _ in range(int(rng.integers(1, 4))):
        ox = tx + float(rng.uniform(-0.4, 0.4))
        oy = ty + float(rng.uniform(-0.25, 0.25))
        if rng.random() < 0.5:
            h = float(rng.uniform(0.1, 0.25))
            item = add(ObjectSpec("item", "box", (ox, oy, th + 0.03 + h / 2),
                                  (0.15, 0.12, h), n_points=170))
        else:
            h = float(rng.uniform(0.12, 0.3))
            item = add(ObjectSpec("item", "cylinder",
                                  (ox, oy, th + 0.03 + h / 2),
                                  (float(rng.uniform(0.04, 0.09)), h, 0),
                                  n_points=170))
        relations.append((item, "standing on", table))

    hang = add(ObjectSpec("item", "box",
                          (-1.95, float(rng.uniform(-1.2, 1.2)),
                           float(rng.uniform(1.0, 1.7))),
                          (0.08, 0.5, 0.4), n_points=160))
    relations.append((hang, "attached to", wall))

    return SceneSpec(class_names=tuple(class_names),
                     predicate_names=tuple(predicate_names),
                     objects=objects, relations=relations, n_frames=n_frames)


# -- labeling ---------------------------------------------------------------------


@dataclass
class LabelResult:
    node_label: dict[int, int]      # class id or -1
    node_instance: dict[int, int]   # instance id or -1


def generate_labels(segments: dict[int, np.ndarray], gt: GroundTruth,
                    radius: float = MATCH_RADIUS) -> LabelResult:
    """Best-match labeling under the 50% overlap and 10% spill rules."""
    tree = cKDTree(gt.points)
    sizes = gt.instance_sizes()
    node_label: dict[int, int] = {}
    node_instance: dict[int, int] = {}
    for seg_id in sorted(segments):
        pos = np.asarray(segments[seg_id])[:, :3]
        dist, idx = tree.query(pos, k=1, distance_upper_bound=radius)
        hit = np.isfinite(dist) & (dist <= radius)
        counts: dict[int, int] = {}
        for inst in gt.instance_ids[idx[hit]]:
            counts[int(inst)] = counts.get(int(inst), 0) + 1
        best, best_count = -1, 0
        for inst in sorted(counts):
            if counts[inst] > best_count:
                best, best_count = inst, counts[inst]
        if best < 0 or best_count < MIN_OVERLAP * pos.shape[0]:
            node_label[seg_id] = -1
            node_instance[seg_id] = -1
            continue
        spill = any(count > MAX_OTHER_COVER * sizes[inst]
                    for inst, count in counts.items() if inst != best)
        if spill:
            node_label[seg_id] = -1
            node_instance[seg_id] = -1
            continue
        node_label[seg_id] = gt.instance_class[best]
        node_instance[seg_id] = best
    return LabelResult(node_label=node_label, node_instance=node_instance)


def edge_label(labels: LabelResult, gt: GroundTruth, i: int, j: int) -> int:
    """Directed predicate label for segment pair (i, j)."""
    none = gt.predicate_names.index("none")
    inst_i = labels.node_instance.get(i, -1)
    inst_j = labels.node_instance.get(j, -1)
    if inst_i < 0 or inst_j < 0:
        return none
    if inst_i == inst_j:
        return gt.predicate_names.index("same part")
    return gt.relations.get((inst_i, inst_j), none)


# -- stream and ground-truth files ----------------------------------------------------


def write_stream(path: str, frames: list[FrameUpdate]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame in frames:
            doc = {
                "frame": frame.frame,
                "segments": {str(sid): np.asarray(pts).tolist()
                             for sid, pts in sorted(frame.additions.items())},
                "merges": [list(m) for m in frame.merges],
                "removed": list(frame.removals),
            }
            fh.write(json.dumps(doc, sort_keys=True) + "\n")


def read_stream(path: str) -> list[FrameUpdate]:
    frames = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                frames.append(FrameUpdate(
                    frame=int(doc["frame"]),
                    additions={int(sid): np.asarray(pts, dtype=np.float64)
                               for sid, pts in doc["segments"].items()},
                    merges=[tuple(m) for m in doc["merges"]],
                    removals=list(doc["removed"]),
                ))
            except (KeyError, TypeError, ValueError, AttributeError) as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from exc
    return frames


def write_gt(path: str, gt: GroundTruth) -> None:
    doc = {
        "classes": list(gt.class_names),
        "predicates": list(gt.predicate_names),
        "points": gt.points.tolist(),
        "instance_ids": gt.instance_ids.tolist(),
        "class_ids": gt.class_ids.tolist(),
        "instance_class": {str(k): v for k, v in sorted(gt.instance_class.items())},
        "relations": [[a, b, p] for (a, b), p in sorted(gt.relations.items())],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)


def read_gt(path: str) -> GroundTruth:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return GroundTruth(
            class_names=tuple(doc["classes"]),
            predicate_names=tuple(doc["predicates"]),
            points=np.asarray(doc["points"], dtype=np.float64),
            instance_ids=np.asarray(doc["instance_ids"], dtype=np.int64),
            class_ids=np.asarray(doc["class_ids"], dtype=np.int64),
            instance_class={int(k): int(v)
                            for k, v in doc["instance_class"].items()},
            relations={(a, b): p for a, b, p in doc["relations"]},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: invalid ground truth: {exc}") from exc


# -- labeled scene assembly ------------------------------------------------------------


@dataclass
class LabeledScene:
    """A replayed stream with labels: the training view plus the instance
    assignment needed for panoptic evaluation."""

    training: TrainingScene
    node_instance: dict[int, int]
    gt: GroundTruth


def scene_file_pairs(directory: str) -> list[tuple[str, str]]:
    """Sorted (stream, ground-truth) file pairs under a directory,
    following the scene_<n>.stream.jsonl / scene_<n>.gt.json convention."""
    import os

    pairs = []
    for name in sorted(os.listdir(directory)):
        if name.endswith(".stream.jsonl"):
            stem = name[:-len(".stream.jsonl")]
            gt_name = stem + ".gt.json"
            gt_path = os.path.join(directory, gt_name)
            if not os.path.exists(gt_path):
                raise DataError(f"missing ground truth for {name}: {gt_name}")
            pairs.append((os.path.join(directory, name), gt_path))
    if not pairs:
        raise DataError(f"no scene streams found in {directory}")
    return pairs


def load_labeled_scenes(directory: str, proximity_threshold: float = 0.5,
                        min_segment_points: int = 64) -> list[LabeledScene]:
    scenes = []
    for stream_path, gt_path in scene_file_pairs(directory):
        frames = read_stream(stream_path)
        gt = read_gt(gt_path)
        scenes.append(build_labeled_scene(frames, gt, proximity_threshold,
                                          min_segment_points))
    return scenes


def build_labeled_scene(frames: list[FrameUpdate], gt: GroundTruth,
                        proximity_threshold: float = 0.5,
                        min_segment_points: int = 64) -> LabeledScene:
    """Replay the stream, keep segments at or above the point floor,
    connect them by bbox proximity, and label nodes and directed edges."""
    scene_map = SceneMap()
    for frame in frames:
        scene_map.apply_frame(frame)
    kept = {sid: seg for sid, seg in scene_map.segments.items()
            if seg.count >= min_segment_points}
    states = {sid: freeze_segment(seg, 8) for sid, seg in kept.items()}
    ids = sorted(kept)
    edges = []
    for a_pos, i in enumerate(ids):
        for j in ids[a_pos + 1:]:
            si, sj = states[i], states[j]
            if aabb_distance(si.bbox_center, si.bbox,
                             sj.bbox_center, sj.bbox) <= proximity_threshold:
                edges.append((i, j))
    points = {sid: kept[sid].points for sid in ids}
    labels = generate_labels(points, gt)
    edge_labels = {}
    for a, b in edges:
        edge_labels[(a, b)] = edge_label(labels, gt, a, b)
        edge_labels[(b, a)] = edge_label(labels, gt, b, a)
    training = TrainingScene(nodes=points, node_labels=labels.node_label,
                             edges=edges, edge_labels=edge_labels)
    return LabeledScene(training=training, node_instance=labels.node_instance,
                        gt=gt)
