"""Fusion algebra, instance clustering, export round trip."""

import itertools
import json

import numpy as np
import pytest

from scenegraph import spn
from scenegraph.errors import DataError
from scenegraph.fusion import (
    W_MAX,
    FusedDistribution,
    FusedSceneGraph,
    UnionFind,
    export_graph,
    fresh,
    fuse,
    load_graph,
)

CLASSES = ("floor", "wall", "thing")
PREDICATES = ("none", "same part", "standing on")


def graph():
    return FusedSceneGraph(class_names=CLASSES, predicate_names=PREDICATES)


def dist(*p):
    return np.array(p, dtype=np.float64)


class TestFuse:
    def test_equal_weights_average(self):
        out = fuse(fresh(dist(0.2, 0.8)), dist(0.8, 0.2))
        np.testing.assert_allclose(out.probs, [0.5, 0.5])
        assert out.weight == 2.0

    def test_saturated_weight_update(self):
        stored = FusedDistribution(probs=dist(1.0, 0.0), weight=100.0)
        out = fuse(stored, dist(0.0, 1.0))
        np.testing.assert_allclose(out.probs, [100 / 101, 1 / 101])
        assert out.weight == 100.0

    def test_fixed_point(self):
        stored = fresh(dist(0.3, 0.7))
        out = fuse(stored, dist(0.3, 0.7))
        np.testing.assert_allclose(out.probs, [0.3, 0.7], atol=1e-15)
        assert out.weight == 2.0

    def test_unnormalized_rejected(self):
        with pytest.raises(DataError):
            fuse(fresh(dist(0.5, 0.5)), dist(0.6, 0.6))
        with pytest.raises(DataError):
            fresh(dist(0.5, 0.6))

    def test_preclamp_order_invariance(self):
        rng = np.random.default_rng(0)
        preds = rng.dirichlet(np.ones(4), size=50)
        reference = preds.mean(axis=0)
        for perm_seed in range(10):
            order = np.random.default_rng(perm_seed).permutation(50)
            acc = fresh(preds[order[0]])
            for k in order[1:]:
                acc = fuse(acc, preds[k])
            np.testing.assert_allclose(acc.probs, reference, atol=1e-9)
            assert acc.weight == 50.0

    def test_weight_monotone_and_clamped(self):
        rng = np.random.default_rng(1)
        acc = fresh(rng.dirichlet(np.ones(3)))
        prev = acc.weight
        for _ in range(150):
            acc = fuse(acc, rng.dirichlet(np.ones(3)))
            assert acc.weight >= prev
            assert acc.weight <= W_MAX
            prev = acc.weight
            assert acc.probs.sum() == pytest.approx(1.0, abs=1e-9)
        assert acc.weight == W_MAX


class TestApplyPrediction:
    def _prediction(self, node_probs, edge_probs, frame=0):
        return spn.Prediction(frame=frame, node_probs=node_probs,
                              edge_probs=edge_probs,
                              node_info={i: {"count": 10 * i}
                                         for i in node_probs})

    def test_first_prediction_stored_verbatim(self):
        g = graph()
        g.apply_prediction(self._prediction({1: dist(0.1, 0.2, 0.7)}, {}), {1})
        np.testing.assert_array_equal(g.node_dists[1].probs, [0.1, 0.2, 0.7])
        assert g.node_dists[1].weight == 1.0

    def test_stale_prediction_skipped_and_counted(self):
        g = graph()
        g.apply_prediction(self._prediction(
            {1: dist(1.0, 0.0, 0.0), 2: dist(1.0, 0.0, 0.0)},
            {(1, 2): dist(1.0, 0.0, 0.0)}), live_ids={1})
        assert g.skipped == 2
        assert 2 not in g.node_dists and (1, 2) not in g.edge_dists

    def test_two_identical_predictions(self):
        g = graph()
        p = self._prediction({1: dist(0.6, 0.3, 0.1)},
                             {(1, 2): dist(0.2, 0.5, 0.3)})
        g.apply_prediction(p, {1, 2})
        g.apply_prediction(p, {1, 2})
        assert g.node_dists[1].weight == 2.0
        assert g.node_dists[1].argmax() == 0
        assert g.edge_dists[(1, 2)].weight == 2.0

    def test_merge_keeps_destination(self):
        g = graph()
        g.apply_prediction(self._prediction(
            {1: dist(1.0, 0.0, 0.0), 2: dist(0.0, 0.0, 1.0)},
            {(1, 2): dist(0.0, 1.0, 0.0), (2, 1): dist(0.0, 1.0, 0.0)}),
            {1, 2})
        g.apply_merge(source=2, destination=1)
        assert 2 not in g.node_dists
        assert not g.edge_dists
        np.testing.assert_array_equal(g.node_dists[1].probs, [1, 0, 0])


class TestUnionFind:
    def test_components_match_flood_fill(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            n = int(rng.integers(1, 20))
            nodes = list(range(n))
            edges = set()
            for _ in range(int(rng.integers(0, 25))):
                a, b = rng.integers(0, n, size=2)
                if a != b:
                    edges.add((min(a, b), max(a, b)))
            uf = UnionFind(nodes)
            for a, b in edges:
                uf.union(int(a), int(b))
            adj = {i: set() for i in nodes}
            for a, b in edges:
                adj[a].add(b)
                adj[b].add(a)
            seen = set()
            flood = []
            for start in nodes:
                if start in seen:
                    continue
                comp = []
                stack = [start]
                seen.add(start)
                while stack:
                    x = stack.pop()
                    comp.append(x)
                    for y in adj[x]:
                        if y not in seen:
                            seen.add(y)
                            stack.append(y)
                flood.append(sorted(comp))
            assert uf.components() == sorted(flood, key=lambda g: g[0])


class TestClusterInstances:
    def _seed(self, g, nodes, sp_edges, counts=None):
        for i, cls in nodes.items():
            probs = np.full(3, 0.05)
            probs[cls] = 0.9
            g.node_dists[i] = fresh(probs / probs.sum())
            g.node_info[i] = {"count": (counts or {}).get(i, 1)}
        for (i, j), is_sp in sp_edges.items():
            probs = dist(0.1, 0.8, 0.1) if is_sp else dist(0.8, 0.1, 0.1)
            g.edge_dists[(i, j)] = fresh(probs)

    def test_no_same_part_all_singletons(self):
        g = graph()
        self._seed(g, {1: 0, 2: 1, 3: 2},
                   {(1, 2): False, (2, 1): False})
        part = g.cluster_instances()
        assert len(part.members) == 3

    def test_chain_merges_transitively(self):
        g = graph()
        self._seed(g, {1: 2, 2: 2, 3: 2},
                   {(1, 2): True, (2, 1): True, (2, 3): True, (3, 2): True})
        part = g.cluster_instances()
        assert part.members == {0: [1, 2, 3]}
        assert part.instance_class[0] == 2

    def test_one_directional_same_part_not_merged(self):
        g = graph()
        self._seed(g, {1: 0, 2: 0}, {(1, 2): True, (2, 1): False})
        part = g.cluster_instances()
        assert len(part.members) == 2

    def test_size_weighted_vote_and_tie_break(self):
        g = graph()
        self._seed(g, {1: 1, 2: 2, 3: 2},
                   {(1, 2): True, (2, 1): True, (2, 3): True, (3, 2): True},
                   counts={1: 100, 2: 30, 3: 30})
        part = g.cluster_instances()
        assert part.instance_class[0] == 1  # 100 beats 60
        g2 = graph()
        self._seed(g2, {1: 2, 2: 0}, {(1, 2): True, (2, 1): True},
                   counts={1: 5, 2: 5})
        assert g2.cluster_instances().instance_class[0] == 0  # tie -> lowest


class TestExport:
    def test_empty_graph_has_header(self):
        doc = json.loads(export_graph(graph()))
        assert doc["schema_version"] == 1
        assert doc["nodes"] == [] and doc["edges"] == [] and doc["instances"] == []

    def test_single_node_document(self):
        g = graph()
        g.node_dists[7] = fresh(dist(0.25, 0.25, 0.5))
        g.node_info[7] = {"count": 12}
        doc = json.loads(export_graph(g))
        assert len(doc["nodes"]) == 1 and len(doc["instances"]) == 1
        assert doc["nodes"][0]["instance"] == 0
        assert doc["instances"][0]["members"] == [7]

    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(3)
        g = graph()
        for i in range(1, 6):
            g.node_dists[i] = fresh(rng.dirichlet(np.ones(3)))
            g.node_info[i] = {"count": int(rng.integers(1, 50))}
        for i, j in itertools.permutations(range(1, 6), 2):
            if rng.random() < 0.4:
                g.edge_dists[(i, j)] = fresh(rng.dirichlet(np.ones(3)))
        text = export_graph(g)
        back = load_graph(text)
        assert set(back.node_dists) == set(g.node_dists)
        for i in g.node_dists:
            assert (back.node_dists[i].probs == g.node_dists[i].probs).all()
            assert back.node_dists[i].weight == g.node_dists[i].weight
        for e in g.edge_dists:
            assert (back.edge_dists[e].probs == g.edge_dists[e].probs).all()
        assert export_graph(back) == text
