"""Running-average fusion of repeated predictions and instance clustering.

Every segment and directed edge stores a class/predicate probability vector
mu with an accumulation weight w. A new prediction with weight w_new folds
in as mu = (mu_new * w_new + mu_old * w_old) / (w_new + w_old), and the
stored weight becomes min(w_max, w_new + w_old) with w_max = 100. Below the
clamp the result is the plain weighted mean and therefore order-invariant;
once clamping engages, order dependence is expected.

Object instances are the connected components of the merge graph that links
two segments when the argmax predicate of BOTH directed edges between them
is `same part`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

W_MAX = 100.0
SCHEMA_VERSION = 1
_NORM_TOL = 1e-6


def _check_distribution(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1:
        raise DataError("distribution must be a vector")
    if (probs < -1e-12).any():
        raise DataError("distribution has negative entries")
    if abs(probs.sum() - 1.0) > _NORM_TOL:
        raise DataError(f"distribution not normalized (sum={probs.sum()!r})")
    return probs


@dataclass
class FusedDistribution:
    """A probability vector with its running-average weight."""

    probs: np.ndarray
    weight: float

    def argmax(self) -> int:
        return int(self.probs.argmax())


def fuse(stored: FusedDistribution, incoming_probs,
         incoming_weight: float = 1.0) -> FusedDistribution:
    """Weighted running average with the weight sum clamped at w_max."""
    incoming = _check_distribution(incoming_probs)
    _check_distribution(stored.probs)
    if incoming_weight <= 0:
        raise DataError("incoming weight must be positive")
    total = incoming_weight + stored.weight
    mixed = (incoming * incoming_weight + stored.probs * stored.weight) / total
    mixed /= mixed.sum()
    return FusedDistribution(probs=mixed, weight=min(W_MAX, total))


def fresh(probs, weight: float = 1.0) -> FusedDistribution:
    return FusedDistribution(probs=_check_distribution(np.array(probs)),
                             weight=min(W_MAX, weight))


class UnionFind:
    """Disjoint sets over ints with path compression and union by size."""

    def __init__(self, items):
        self._parent = {i: i for i in items}
        self._size = {i: 1 for i in items}

    def find(self, x: int) -> int:
        root = x
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[x] != root:
            self._parent[x], x = root, self._parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self._size[ra] < self._size[rb]:
            ra, rb = rb, ra
        self._parent[rb] = ra
        self._size[ra] += self._size[rb]

    def components(self) -> list[list[int]]:
        groups: dict[int, list[int]] = {}
        for x in self._parent:
            groups.setdefault(self.find(x), []).append(x)
        return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])


@dataclass
class InstancePartition:
    """Instances as connected components of the same-part merge graph."""

    node_to_instance: dict[int, int]
    members: dict[int, list[int]]
    instance_class: dict[int, int]


@dataclass
class FusedSceneGraph:
    """Globally fused distributions plus per-node metadata.

    Mutated by a single fuser; predictions may arrive late and stay valid
    because fusion is a running average.
    """

    class_names: tuple[str, ...]
    predicate_names: tuple[str, ...]
    node_dists: dict[int, FusedDistribution] = field(default_factory=dict)
    edge_dists: dict[tuple[int, int], FusedDistribution] = field(default_factory=dict)
    node_info: dict[int, dict] = field(default_factory=dict)
    skipped: int = 0

    @property
    def same_part_index(self) -> int:
        return self.predicate_names.index("same part")

    def apply_prediction(self, prediction, live_ids) -> None:
        """Fuse one Prediction; entries for segments no longer live are
        skipped (and counted)."""
        live = set(live_ids)
        for node_id in sorted(prediction.node_probs):
            probs = prediction.node_probs[node_id]
            if node_id not in live:
                self.skipped += 1
                continue
            stored = self.node_dists.get(node_id)
            if stored is None:
                self.node_dists[node_id] = fresh(probs)
            else:
                self.node_dists[node_id] = fuse(stored, probs)
            info = prediction.node_info.get(node_id)
            if info is not None:
                self.node_info[node_id] = dict(info)
        for edge in sorted(prediction.edge_probs):
            probs = prediction.edge_probs[edge]
            if edge[0] not in live or edge[1] not in live:
                self.skipped += 1
                continue
            stored = self.edge_dists.get(edge)
            if stored is None:
                self.edge_dists[edge] = fresh(probs)
            else:
                self.edge_dists[edge] = fuse(stored, probs)

    def remove_node(self, node_id: int) -> None:
        self.node_dists.pop(node_id, None)
        self.node_info.pop(node_id, None)
        for edge in [e for e in self.edge_dists if node_id in e]:
            del self.edge_dists[edge]

    def apply_merge(self, source: int, destination: int) -> None:
        """Map-side merge: the destination keeps its distribution, the
        source's is discarded (its points re-enter prediction via the
        size-change flag)."""
        self.remove_node(source)

    def node_class(self, node_id: int) -> int:
        return self.node_dists[node_id].argmax()

    def cluster_instances(self) -> InstancePartition:
        """Connected components of the both-directions same-part graph;
        instance class is the point-count-weighted majority of member argmax
        classes, ties to the lowest class index."""
        sp = self.same_part_index
        uf = UnionFind(sorted(self.node_dists))
        for (i, j), dist in self.edge_dists.items():
            if i >= j or i not in self.node_dists or j not in self.node_dists:
                continue
            back = self.edge_dists.get((j, i))
            if back is None:
                continue
            if dist.argmax() == sp and back.argmax() == sp:
                uf.union(i, j)
        node_to_instance: dict[int, int] = {}
        members: dict[int, list[int]] = {}
        instance_class: dict[int, int] = {}
        n_classes = len(self.class_names)
        for inst_id, group in enumerate(uf.components()):
            members[inst_id] = group
            votes = np.zeros(n_classes)
            for node_id in group:
                node_to_instance[node_id] = inst_id
                weight = self.node_info.get(node_id, {}).get("count", 1)
                votes[self.node_dists[node_id].argmax()] += weight
            instance_class[inst_id] = int(votes.argmax())
        return InstancePartition(node_to_instance=node_to_instance,
                                 members=members, instance_class=instance_class)


# -- serialization ----------------------------------------------------------------


def export_graph(fused: FusedSceneGraph) -> str:
    """Serialize to JSON; float repr keeps distributions bit-exact on
    round trip."""
    partition = fused.cluster_instances()
    nodes = []
    for node_id in sorted(fused.node_dists):
        dist = fused.node_dists[node_id]
        nodes.append({
            "id": node_id,
            "class_probs": dist.probs.tolist(),
            "class": dist.argmax(),
            "class_name": fused.class_names[dist.argmax()],
            "weight": dist.weight,
            "instance": partition.node_to_instance[node_id],
            "info": fused.node_info.get(node_id, {}),
        })
    edges = []
    for (i, j) in sorted(fused.edge_dists):
        dist = fused.edge_dists[(i, j)]
        edges.append({
            "source": i,
            "target": j,
            "predicate_probs": dist.probs.tolist(),
            "predicate": dist.argmax(),
            "predicate_name": fused.predicate_names[dist.argmax()],
            "weight": dist.weight,
        })
    instances = []
    for inst_id in sorted(partition.members):
        cls = partition.instance_class[inst_id]
        instances.append({
            "id": inst_id,
            "members": partition.members[inst_id],
            "class": cls,
            "class_name": fused.class_names[cls],
            "size": sum(fused.node_info.get(n, {}).get("count", 1)
                        for n in partition.members[inst_id]),
        })
    doc = {
        "schema_version": SCHEMA_VERSION,
        "classes": list(fused.class_names),
        "predicates": list(fused.predicate_names),
        "nodes": nodes,
        "edges": edges,
        "instances": instances,
        "skipped_predictions": fused.skipped,
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def load_graph(text: str) -> FusedSceneGraph:
    """Parse an exported document back into a FusedSceneGraph."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid graph document: {exc}") from exc
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported schema_version {doc.get('schema_version')}")
    fused = FusedSceneGraph(class_names=tuple(doc["classes"]),
                            predicate_names=tuple(doc["predicates"]))
    for node in doc["nodes"]:
        fused.node_dists[node["id"]] = FusedDistribution(
            probs=np.array(node["class_probs"]), weight=node["weight"])
        if node.get("info"):
            fused.node_info[node["id"]] = node["info"]
    for edge in doc["edges"]:
        fused.edge_dists[(edge["source"], edge["target"])] = FusedDistribution(
            probs=np.array(edge["predicate_probs"]), weight=edge["weight"])
    fused.skipped = doc.get("skipped_predictions", 0)
    return fused
