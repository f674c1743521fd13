"""Neighbor graph: proximity edges, flags, plans, cache reuse."""

import numpy as np
import pytest

from scenegraph import spn
from scenegraph.config import ModelConfig
from scenegraph.neighbor_graph import NeighborGraph, aabb_distance
from scenegraph.scene_map import Segment, as_point_array, freeze_segment

TINY = ModelConfig.tiny()


def box_state(seg_id, center, extents, n_extra=0, rng=None, count_bump=0):
    """A segment whose bbox is exactly `extents` around `center`."""
    center = np.asarray(center, dtype=np.float64)
    extents = np.asarray(extents, dtype=np.float64)
    corners = center + np.array([[sx, sy, sz] for sx in (-0.5, 0.5)
                                 for sy in (-0.5, 0.5)
                                 for sz in (-0.5, 0.5)]) * extents
    pts = corners
    if n_extra:
        rng = rng or np.random.default_rng(seg_id)
        inner = center + (rng.random((n_extra, 3)) - 0.5) * extents * 0.9
        pts = np.vstack([corners, inner])
    if count_bump:
        pts = np.vstack([pts, np.repeat(center[None], count_bump, axis=0)])
    seg = Segment(seg_id)
    seg.add_points(as_point_array(pts))
    return freeze_segment(seg, 16, base_seed=3)


def chain_graph(n=3, spacing=1.2, threshold=0.5):
    g = NeighborGraph(n_layers=2)
    for i in range(1, n + 1):
        g.upsert(box_state(i, ((i - 1) * spacing, 0, 0), (1, 1, 1)))
    g.maintain_edges(g.node_ids, threshold)
    return g


class TestAabbDistance:
    def test_gap_04_makes_edge(self):
        g = NeighborGraph()
        g.upsert(box_state(1, (0, 0, 0), (1, 1, 1)))
        g.upsert(box_state(2, (1.4, 0, 0), (1, 1, 1)))  # surface gap 0.4
        g.maintain_edges([1], threshold=0.5)
        assert g.has_edge(1, 2) and g.has_edge(2, 1)

    def test_gap_06_makes_no_edge(self):
        g = NeighborGraph()
        g.upsert(box_state(1, (0, 0, 0), (1, 1, 1)))
        g.upsert(box_state(2, (1.6, 0, 0), (1, 1, 1)))
        g.maintain_edges([1], threshold=0.5)
        assert not g.has_edge(1, 2)

    def test_overlap_distance_zero(self):
        a = box_state(1, (0, 0, 0), (1, 1, 1))
        b = box_state(2, (0.3, 0.2, 0), (1, 1, 1))
        assert aabb_distance(a.bbox_center, a.bbox, b.bbox_center, b.bbox) == 0.0

    def test_diagonal_gap_is_euclidean(self):
        a = box_state(1, (0, 0, 0), (1, 1, 1))
        b = box_state(2, (1.3, 1.4, 0), (1, 1, 1))
        d = aabb_distance(a.bbox_center, a.bbox, b.bbox_center, b.bbox)
        assert d == pytest.approx(np.hypot(0.3, 0.4))

    def test_edges_symmetric_and_idempotent(self):
        g = chain_graph(4)
        for i, j in g.directed_edges():
            assert g.has_edge(j, i)
        before = g.directed_edges()
        delta = g.maintain_edges(g.node_ids, 0.5)
        assert delta.added == [] and delta.removed == []
        assert g.directed_edges() == before


class TestFlags:
    def test_growth_rule(self):
        g = NeighborGraph()
        g.upsert(box_state(1, (0, 0, 0), (1, 1, 1), count_bump=92))  # 100 pts
        g.note_predicted([1], frame=0)
        g.upsert(box_state(1, (0, 0, 0), (1, 1, 1), count_bump=103))  # 111 pts
        assert g.flag_for_prediction(frame=1) == [1]
        g.note_predicted([1], frame=1)
        g.upsert(box_state(1, (0, 0, 0), (1, 1, 1), count_bump=112))  # 120 < 111*1.1
        assert g.flag_for_prediction(frame=2) == []

    def test_staleness_rule(self):
        g = NeighborGraph()
        g.upsert(box_state(1, (0, 0, 0), (1, 1, 1)))
        g.note_predicted([1], frame=0)
        assert g.flag_for_prediction(frame=59) == []
        assert g.flag_for_prediction(frame=61) == [1]

    def test_never_predicted_flagged(self):
        g = chain_graph(2)
        assert g.flag_for_prediction(frame=0) == [1, 2]

    def test_min_points_holds_back(self):
        g = NeighborGraph()
        g.upsert(box_state(1, (0, 0, 0), (1, 1, 1)))  # 8 corner points
        assert g.flag_for_prediction(frame=0, min_points=100) == []


class TestExtractSubgraph:
    def test_chain_flag_end(self):
        g = chain_graph(3)
        snap = g.extract_subgraph([1])
        assert sorted(snap.nodes) == [1, 2]
        assert snap.directed_edges == ((1, 2), (2, 1))

    def test_chain_flag_middle(self):
        g = chain_graph(3)
        snap = g.extract_subgraph([2])
        assert sorted(snap.nodes) == [1, 2, 3]
        assert len(snap.directed_edges) == 4

    def test_chain_flag_both_ends(self):
        g = chain_graph(3)
        snap = g.extract_subgraph([1, 3])
        assert sorted(snap.nodes) == [1, 2, 3]
        assert set(snap.directed_edges) == {(1, 2), (2, 1), (2, 3), (3, 2)}

    def test_empty_flag_empty_snapshot(self):
        g = chain_graph(3)
        snap = g.extract_subgraph([])
        assert len(snap) == 0 and snap.directed_edges == ()


def bfs_ball(adj, seeds, hops):
    ball = set(seeds)
    for _ in range(hops):
        ball  = ball | {j for i in ball for j in adj.get(i, ())}
    return ball


class TestPlans:
    def test_chain_single_change(self):
        g = chain_graph(3)
        plan = g.mark_dirty_and_plan({1})
        assert plan.nodes == [{1}, {1, 2}, {1, 2, 3}]
        assert plan.edges[0] == {(1, 2), (2, 1)}
        assert plan.edges[1] == {(1, 2), (2, 1)}
        assert plan.edges[2] == {(1, 2), (2, 1), (2, 3), (3, 2)}

    def test_empty_change_empty_plan(self):
        g = chain_graph(3)
        assert g.mark_dirty_and_plan(set()).is_empty()

    def test_star_center_one_hop(self):
        g = NeighborGraph(n_layers=1)
        g.upsert(box_state(1, (0, 0, 0), (1, 1, 1)))
        for k in range(2, 7):
            ang = k
            g.upsert(box_state(k, (1.2 * np.cos(ang), 1.2 * np.sin(ang), 0),
                               (1, 1, 1)))
        g.maintain_edges(g.node_ids, threshold=0.9)
        assert all(g.has_edge(1, k) for k in range(2, 7))
        plan = g.mark_dirty_and_plan({1}, n_layers=1)
        assert plan.nodes[1] == set(range(1, 7))

    def test_plan_equals_bfs_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            g = NeighborGraph(n_layers=2)
            n = int(rng.integers(4, 15))
            for i in range(1, n + 1):
                g.upsert(box_state(i, rng.random(3) * 3, (0.8, 0.8, 0.8)))
            g.maintain_edges(g.node_ids, threshold=0.4)
            changed = set(rng.choice(np.arange(1, n + 1),
                                     size=int(rng.integers(1, 3)),
                                     replace=False).tolist())
            plan = g.mark_dirty_and_plan(changed)
            for hops in range(3):
                assert plan.nodes[hops] == bfs_ball(g.adj, changed, hops)
            assert plan.edges[0] == {(i, j) for i in plan.nodes[0]
                                     for j in g.adj[i]} | \
                                    {(j, i) for i in plan.nodes[0]
                                     for j in g.adj[i]}


class TestCacheEquivalence:
    def _random_graph(self, rng, n_nodes):
        g = NeighborGraph(n_layers=TINY.n_layers)
        for i in range(1, n_nodes + 1):
            g.upsert(box_state(i, rng.random(3) * 2.5, (0.7, 0.7, 0.7),
                               n_extra=6, rng=rng))
        g.maintain_edges(g.node_ids, threshold=0.5)
        return g

    def test_incremental_updates_match_full_forward(self):
        params = spn.build_parameters(TINY, seed=2)
        rng = np.random.default_rng(0)
        g = self._random_graph(rng, 9)
        counters = spn.RecomputeCounters()
        plan = g.mark_dirty_and_plan(g.take_pending())
        spn.run_plan(params, g.states(), g.adj, plan, g.cache, counters)
        for step in range(12):
            nid = int(rng.choice(g.node_ids))
            g.upsert(box_state(nid, rng.random(3) * 2.5, (0.7, 0.7, 0.7),
                               n_extra=6, rng=rng, count_bump=step + 1))
            g.maintain_edges([nid], threshold=0.5)
            plan = g.mark_dirty_and_plan(g.take_pending())
            spn.run_plan(params, g.states(), g.adj, plan, g.cache, counters)
            oracle = spn.full_forward(params, g.states(), g.adj)
            for layer in range(TINY.n_layers + 1):
                assert set(oracle.node[layer]) == set(g.cache.node[layer])
                for i, feat in oracle.node[layer].items():
                    np.testing.assert_allclose(g.cache.node[layer][i], feat,
                                               atol=1e-6)
                for e, feat in oracle.edge[layer].items():
                    np.testing.assert_allclose(g.cache.edge[layer][e], feat,
                                               atol=1e-6)
            for i, probs in oracle.node_probs.items():
                np.testing.assert_allclose(g.cache.node_probs[i], probs, atol=1e-6)
            for e, probs in oracle.edge_probs.items():
                np.testing.assert_allclose(g.cache.edge_probs[e], probs, atol=1e-6)

    def test_counters_equal_plan_sizes(self):
        params = spn.build_parameters(TINY, seed=2)
        rng = np.random.default_rng(5)
        g = self._random_graph(rng, 8)
        plan0 = g.mark_dirty_and_plan(g.take_pending())
        spn.run_plan(params, g.states(), g.adj, plan0, g.cache)
        nid = int(rng.choice(g.node_ids))
        g.upsert(box_state(nid, rng.random(3) * 2.5, (0.7, 0.7, 0.7),
                           n_extra=6, rng=rng, count_bump=3))
        g.maintain_edges([nid], threshold=0.5)
        plan = g.mark_dirty_and_plan(g.take_pending())
        counters = spn.RecomputeCounters()
        spn.run_plan(params, g.states(), g.adj, plan, g.cache, counters)
        sizes = plan.sizes()
        assert counters.node_feature == sizes["nodes"][0]
        assert counters.edge_feature == sizes["edges"][0]
        assert counters.gnn_nodes == sizes["nodes"][1:]
        assert counters.gnn_edges == sizes["edges"][1:]
        assert counters.classify_nodes == sizes["nodes"][-1]
        assert counters.classify_edges == sizes["edges"][-1]

    def test_removal_cleans_cache_and_dirties_neighbors(self):
        params = spn.build_parameters(TINY, seed=2)
        g = chain_graph(3)
        spn.run_plan(params, g.states(), g.adj,
                     g.mark_dirty_and_plan(g.take_pending()), g.cache)
        g.remove(2)
        assert 2 not in g.cache.node_probs
        assert all(2 not in layer for layer in g.cache.node[0:1])
        pending = g.take_pending()
        assert pending == {1, 3}
        plan = g.mark_dirty_and_plan(pending)
        spn.run_plan(params, g.states(), g.adj, plan, g.cache)
        oracle = spn.full_forward(params, g.states(), g.adj)
        for i, probs in oracle.node_probs.items():
            np.testing.assert_allclose(g.cache.node_probs[i], probs, atol=1e-6)
