"""Proximity graph over segments with the layered feature cache.

Nodes hold frozen per-segment snapshots (properties plus sampled points);
undirected proximity edges exist while the axis-aligned bounding boxes are
within a distance threshold and are materialized as two directed edges for
the network. The graph also tracks which segments changed since the last
prediction pass so that only the affected l-hop neighborhoods of the
layered feature cache get recomputed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scene_map import SegmentState
from .spn import FeatureCache


def aabb_distance(center_a: np.ndarray, extent_a: np.ndarray,
                  center_b: np.ndarray, extent_b: np.ndarray) -> float:
    """Euclidean norm of the per-axis gaps between two axis-aligned boxes
    given by center and full extents; 0 when they overlap."""
    gap = np.abs(center_a - center_b) - (extent_a + extent_b) * 0.5
    np.maximum(gap, 0.0, out=gap)
    return float(np.sqrt((gap * gap).sum()))


@dataclass(frozen=True)
class SubgraphSnapshot:
    """Immutable extraction scope: flagged nodes plus direct neighbors,
    with all edges among the included nodes."""

    flagged: frozenset[int]
    nodes: dict[int, SegmentState]
    directed_edges: tuple[tuple[int, int], ...]

    def __len__(self):
        return len(self.nodes)


@dataclass
class RecomputePlan:
    """Per layer l, the node and edge feature sets to recompute.

    nodes[l] is exactly the l-hop neighborhood of the changed set at
    planning time; edges[0] are the directed edges incident to the changed
    set and edges[l] (l >= 1) those incident to nodes[l - 1].
    """

    nodes: list[set[int]]
    edges: list[set[tuple[int, int]]]

    def sizes(self) -> dict:
        return {
            "nodes": [len(s) for s in self.nodes],
            "edges": [len(s) for s in self.edges],
        }

    def is_empty(self) -> bool:
        return all(not s for s in self.nodes) and all(not s for s in self.edges)


@dataclass
class _NodeEntry:
    state: SegmentState
    last_predicted_size: int | None = None
    last_predicted_frame: int | None = None


@dataclass
class EdgeDelta:
    added: list[tuple[int, int]] = field(default_factory=list)
    removed: list[tuple[int, int]] = field(default_factory=list)


class NeighborGraph:
    """Segments as nodes, proximity edges, update flags and feature cache.

    Owned by the prediction worker; the map worker hands over frozen
    SegmentState snapshots, never live segments.
    """

    def __init__(self, n_layers: int = 2):
        self.n_layers = n_layers
        self.entries: dict[int, _NodeEntry] = {}
        self.adj: dict[int, set[int]] = {}
        self.cache = FeatureCache(n_layers=n_layers)
        # accumulated layer-0 dirty set since the last executed plan
        self.pending_changed: set[int] = set()

    # -- basic structure -----------------------------------------------------

    @property
    def node_ids(self) -> list[int]:
        return sorted(self.entries)

    def states(self) -> dict[int, SegmentState]:
        return {i: e.state for i, e in self.entries.items()}

    def has_edge(self, i: int, j: int) -> bool:
        return j in self.adj.get(i, ())

    def directed_edges(self) -> list[tuple[int, int]]:
        return sorted((i, j) for i, nbrs in self.adj.items() for j in nbrs)

    def upsert(self, state: SegmentState) -> None:
        """Insert or refresh a node's frozen snapshot; marks it changed."""
        entry = self.entries.get(state.id)
        if entry is None:
            self.entries[state.id] = _NodeEntry(state=state)
            self.adj[state.id] = set()
        else:
            entry.state = state
        self.pending_changed.add(state.id)

    def remove(self, node_id: int) -> None:
        """Drop a node; its former neighbors become dirty at layer 0."""
        if node_id not in self.entries:
            return
        for j in list(self.adj[node_id]):
            self.adj[j].discard(node_id)
            self.cache.drop_edge(node_id, j)
            self.pending_changed.add(j)
        del self.adj[node_id]
        del self.entries[node_id]
        self.cache.drop_node(node_id)
        self.pending_changed.discard(node_id)

    def apply_merge(self, source: int, destination: int) -> None:
        """Mirror a map-side merge: the source node disappears; the
        destination is refreshed separately via upsert."""
        self.remove(source)
        if destination in self.entries:
            self.pending_changed.add(destination)

    # -- proximity edges -------------------------------------------------------

    def maintain_edges(self, touched_ids, threshold: float = 0.5) -> EdgeDelta:
        """Re-evaluate proximity edges incident to the touched segments.

        Symmetric and idempotent. Topology changes dirty both endpoints at
        layer 0 and invalidate the cached features of dropped edges.
        """
        delta = EdgeDelta()
        for i in sorted(set(touched_ids) & set(self.entries)):
            si = self.entries[i].state
            for j in self.node_ids:
                if j == i:
                    continue
                sj = self.entries[j].state
                d = aabb_distance(si.bbox_center, si.bbox, sj.bbox_center, sj.bbox)
                present = self.has_edge(i, j)
                if d <= threshold and not present:
                    self.adj[i].add(j)
                    self.adj[j].add(i)
                    delta.added.append((min(i, j), max(i, j)))
                    self.pending_changed.update((i, j))
                elif d > threshold and present:
                    self.adj[i].discard(j)
                    self.adj[j].discard(i)
                    self.cache.drop_edge(i, j)
                    delta.removed.append((min(i, j), max(i, j)))
                    self.pending_changed.update((i, j))
        return delta

    def full_edge_sweep(self, threshold: float = 0.5) -> EdgeDelta:
        return self.maintain_edges(self.node_ids, threshold)

    # -- update flags ------------------------------------------------------------

    def flag_for_prediction(self, frame: int, resize_ratio: float = 0.10,
                            stale_frames: int = 60,
                            min_points: int = 1) -> list[int]:
        """Segments that grew more than ``resize_ratio`` since their last
        prediction, went stale for ``stale_frames`` frames, or were never
        predicted. Segments below ``min_points`` are held back."""
        flagged = []
        for i in self.node_ids:
            entry = self.entries[i]
            if entry.state.count < min_points:
                continue
            if entry.last_predicted_size is None:
                flagged.append(i)
                continue
            growth = (entry.state.count - entry.last_predicted_size) \
                / entry.last_predicted_size
            if growth > resize_ratio:
                flagged.append(i)
            elif frame - entry.last_predicted_frame >= stale_frames:
                flagged.append(i)
        return flagged

    def note_predicted(self, node_ids, frame: int) -> None:
        for i in node_ids:
            entry = self.entries.get(i)
            if entry is not None:
                entry.last_predicted_size = entry.state.count
                entry.last_predicted_frame = frame

    # -- extraction and dirty planning ---------------------------------------------

    def extract_subgraph(self, flagged) -> SubgraphSnapshot:
        """Flagged nodes, their direct neighbors, and all edges among the
        included nodes, with frozen states. Empty input gives an empty
        snapshot."""
        flagged = set(flagged) & set(self.entries)
        included = set(flagged)
        for i in flagged:
            included |= self.adj[i]
        edges = tuple(sorted(
            (i, j)
            for i in included for j in self.adj[i] if j in included))
        return SubgraphSnapshot(
            flagged=frozenset(flagged),
            nodes={i: self.entries[i].state for i in sorted(included)},
            directed_edges=edges,
        )

    def mark_dirty_and_plan(self, changed_ids, n_layers: int | None = None) -> RecomputePlan:
        """Breadth-first dirty propagation: nodes[l] is the l-hop ball
        around the changed set on the current topology."""
        L = self.n_layers if n_layers is None else n_layers
        ball = set(changed_ids) & set(self.entries)
        node_sets = [set(ball)]
        for _ in range(L):
            nxt = set(ball)
            for i in ball:
                nxt |= self.adj[i]
            ball = nxt
            node_sets.append(set(ball))
        edge_sets = []
        for layer in range(L + 1):
            seed = node_sets[0] if layer == 0 else node_sets[layer - 1]
            incident = set()
            for i in seed:
                for j in self.adj[i]:
                    incident.add((i, j))
                    incident.add((j, i))
            edge_sets.append(incident)
        return RecomputePlan(nodes=node_sets, edges=edge_sets)

    def take_pending(self) -> set[int]:
        """Return and clear the accumulated layer-0 dirty set."""
        pending = self.pending_changed & set(self.entries)
        self.pending_changed = set()
        return pending
