"""Metric implementations against brute-force oracles."""

import itertools

import numpy as np
import pytest

from scenegraph.errors import DataError
from scenegraph.metrics import (
    iou_per_class,
    mean_iou,
    object_recall_at_k,
    panoptic_quality,
    predicate_recall_at_k,
    rank_of_label,
    relationship_rank,
    relationship_recall_at_k,
    transfer_labels,
)


class TestRecall:
    def test_perfect_one_hot_any_k(self):
        probs = {1: np.array([0, 1.0, 0]), 2: np.array([1.0, 0, 0])}
        labels = {1: 1, 2: 0}
        for k in (1, 2, 3):
            assert object_recall_at_k(probs, labels, k) == 1.0

    def test_uniform_full_k(self):
        c = 6
        probs = {1: np.full(c, 1 / c)}
        assert object_recall_at_k(probs, {1: 3}, c) == 1.0

    def test_rank_tie_break_ascending(self):
        p = np.array([0.4, 0.4, 0.2])
        assert rank_of_label(p, 0) == 1
        assert rank_of_label(p, 1) == 2
        assert rank_of_label(p, 2) == 3

    def test_k_below_one_rejected(self):
        with pytest.raises(DataError):
            object_recall_at_k({}, {}, 0)
        with pytest.raises(DataError):
            predicate_recall_at_k({}, {}, 0)
        with pytest.raises(DataError):
            relationship_recall_at_k({}, {}, {}, 0)

    def test_predicate_recall_excludes_by_label(self):
        probs = {(1, 2): np.array([0.9, 0.1]), (2, 1): np.array([0.1, 0.9])}
        labels = {(1, 2): 0, (2, 1): 1}
        assert predicate_recall_at_k(probs, labels, 1) == 1.0
        assert predicate_recall_at_k(probs, labels, 1, exclude_label=0) == 1.0
        labels_bad = {(1, 2): 1, (2, 1): 1}
        assert predicate_recall_at_k(probs, labels_bad, 1) == 0.5

    def test_two_node_toy_matches_enumeration(self):
        node_probs = {1: np.array([0.6, 0.4]), 2: np.array([0.7, 0.3])}
        edge_probs = {(1, 2): np.array([0.5, 0.5])}
        combos = sorted(
            ((node_probs[1][a] * edge_probs[(1, 2)][p] * node_probs[2][b],
              (a, p, b))
             for a, p, b in itertools.product(range(2), range(2), range(2))),
            key=lambda t: (-t[0], t[1]))
        for want_rank, (_, triplet) in enumerate(combos, start=1):
            assert relationship_rank(node_probs[1], edge_probs[(1, 2)],
                                     node_probs[2], triplet) == want_rank
        gt = {(1, 2): combos[2][1]}
        assert relationship_recall_at_k(node_probs, edge_probs, gt, 3) == 1.0
        assert relationship_recall_at_k(node_probs, edge_probs, gt, 2) == 0.0

    def test_relationship_rank_random_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            nc, npred = int(rng.integers(2, 6)), int(rng.integers(2, 5))
            ps = rng.dirichlet(np.ones(nc))
            pe = rng.dirichlet(np.ones(npred))
            po = rng.dirichlet(np.ones(nc))
            triplet = (int(rng.integers(nc)), int(rng.integers(npred)),
                       int(rng.integers(nc)))
            ranked = sorted(
                ((ps[a] * pe[p] * po[b], (a, p, b))
                 for a, p, b in itertools.product(range(nc), range(npred),
                                                  range(nc))),
                key=lambda t: (-t[0], t[1]))
            oracle = 1 + [t for _, t in ranked].index(triplet)
            assert relationship_rank(ps, pe, po, triplet) == oracle


class TestIoU:
    def test_worked_example(self):
        pred = np.array([0, 1, 1, 1, 0])
        gt = np.array([2, 2, 1, 1, 1])
        assert iou_per_class(pred, gt)[1] == pytest.approx(0.5)

    def test_identical_labelings(self):
        labels = np.array([0, 1, 2, 1, 0])
        per = iou_per_class(labels, labels)
        assert all(v == 1.0 for v in per.values())
        assert mean_iou(labels, labels) == 1.0

    def test_random_matches_set_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = 10
            pred = rng.integers(0, 4, size=n)
            gt = rng.integers(0, 4, size=n)
            per = iou_per_class(pred, gt)
            for cls in set(pred.tolist()) | set(gt.tolist()):
                p = {i for i in range(n) if pred[i] == cls}
                g = {i for i in range(n) if gt[i] == cls}
                assert per[cls] == pytest.approx(len(p & g) / len(p | g))
            gt_present = sorted(set(gt.tolist()))
            want = np.mean([per.get(c, 0.0) for c in gt_present])
            assert mean_iou(pred, gt) == pytest.approx(want)

    def test_mean_over_gt_classes_only(self):
        pred = np.array([3, 3, 0, 1])
        gt = np.array([0, 0, 0, 1])
        per = iou_per_class(pred, gt)
        assert 3 in per  # reported per class
        assert mean_iou(pred, gt) == pytest.approx((1 / 3 + 1.0) / 2)


class TestTransfer:
    def test_nn_mode_covers_everything(self):
        gt_pts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0.0]])
        recon = np.array([[0, 0, 0], [2.2, 0, 0.0]])
        labels = np.array([5, 7])
        out, mask = transfer_labels(gt_pts, recon, labels, mode="nn")
        assert mask.all()
        np.testing.assert_array_equal(out, [5, 5, 7])

    def test_skip_mode_drops_missing(self):
        gt_pts = np.array([[0, 0, 0], [1, 0, 0.0]])
        recon = np.array([[0, 0, 0.0]])
        labels = np.array([5])
        out, mask = transfer_labels(gt_pts, recon, labels, mode="skip")
        assert mask.tolist() == [True, False]
        assert out[0] == 5 and out[1] == -1


from oracles import brute_force_pq


class TestPanopticQuality:
    def test_exact_match_is_perfect(self):
        inst = np.zeros(10, dtype=int)
        cls = np.full(10, 3)
        report = panoptic_quality(inst, cls, inst, cls)
        assert report.per_class[3].pq == 1.0
        assert report.all == (1.0, 1.0, 1.0)

    def test_single_match_iou_06(self):
        gt_inst = np.zeros(10, dtype=int)
        gt_cls = np.ones(10, dtype=int)
        pred_inst = np.array([0] * 6 + [1] * 4)
        pred_cls = np.array([1] * 6 + [7] * 4)
        report = panoptic_quality(pred_inst, pred_cls, gt_inst, gt_cls)
        row = report.per_class[1]
        assert row.sq == pytest.approx(0.6)
        assert row.rq == 1.0
        assert row.pq == pytest.approx(0.6)

    def test_stuff_merged_to_single_instance(self):
        gt_inst = np.array([0, 1, 2, 3])
        gt_cls = np.array([0, 0, 0, 0])
        pred_inst = np.array([7, 8, 9, 9])
        pred_cls = np.array([0, 0, 0, 0])
        report = panoptic_quality(pred_inst, pred_cls, gt_inst, gt_cls,
                                  stuff={0})
        row = report.per_class[0]
        assert (row.tp, row.fp, row.fn) == (1, 0, 0)
        assert report.stuff == (1.0, 1.0, 1.0)

    def test_random_scenes_match_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = int(rng.integers(4, 21))
            n_inst = int(rng.integers(1, 7))
            gt_inst = rng.integers(0, n_inst, size=n)
            gt_cls_of = rng.integers(0, 4, size=n_inst)
            gt_cls = gt_cls_of[gt_inst]
            pred_inst = gt_inst.copy()
            flip = rng.random(n) < 0.3
            pred_inst[flip] = rng.integers(0, n_inst + 2, size=int(flip.sum()))
            pred_cls_of = rng.integers(0, 4, size=n_inst + 2)
            pred_cls = pred_cls_of[pred_inst]
            stuff = {0} if rng.random() < 0.5 else set()
            report = panoptic_quality(pred_inst, pred_cls, gt_inst, gt_cls,
                                      stuff=stuff)
            oracle = brute_force_pq(pred_inst.tolist(), pred_cls.tolist(),
                                    gt_inst.tolist(), gt_cls.tolist(), stuff)
            assert set(report.per_class) == set(oracle)
            for cls, (pq, sq, rq) in oracle.items():
                row = report.per_class[cls]
                assert row.pq == pytest.approx(pq)
                assert row.sq == pytest.approx(sq)
                assert row.rq == pytest.approx(rq)
                assert row.pq == pytest.approx(row.sq * row.rq)
