"""Independent brute-force implementations used to check the metric code.

These deliberately avoid the library's own code paths: explicit point-index
sets, full candidate enumeration, greedy pairwise matching.
"""

import itertools


def brute_force_pq(pred_inst, pred_cls, gt_inst, gt_cls, stuff, thr=0.5):
    """Panoptic matching over explicit point-index sets. Returns
    {class: (pq, sq, rq)}."""
    n = len(gt_inst)

    def groups(inst, cls):
        out = {}
        for i in range(n):
            key = (-1000 - cls[i]) if cls[i] in stuff else inst[i]
            out.setdefault(key, set()).add(i)
        labels = {}
        for key, members in out.items():
            votes = {}
            for i in members:
                votes[cls[i]] = votes.get(cls[i], 0) + 1
            labels[key] = max(sorted(votes), key=lambda c: votes[c])
        return out, labels

    p_groups, p_labels = groups(pred_inst, pred_cls)
    g_groups, g_labels = groups(gt_inst, gt_cls)
    classes = sorted(set(p_labels.values()) | set(g_labels.values()))
    per_class = {}
    for cls in classes:
        preds = [k for k, c in p_labels.items() if c == cls]
        gts = [k for k, c in g_labels.items() if c == cls]
        matches = []
        for g in gts:
            for p in preds:
                inter = len(g_groups[g] & p_groups[p])
                union = len(g_groups[g] | p_groups[p])
                if union and inter / union > thr:
                    matches.append((g, p, inter / union))
        assert len({g for g, _, _ in matches}) == len(matches)
        assert len({p for _, p, _ in matches}) == len(matches)
        tp = len(matches)
        fp = len(preds) - tp
        fn = len(gts) - tp
        if tp + fp + fn == 0:
            continue
        sq = sum(m[2] for m in matches) / tp if tp else 0.0
        rq = tp / (tp + 0.5 * fp + 0.5 * fn)
        per_class[cls] = (sq * rq, sq, rq)
    return per_class


def brute_force_iou(pred, gt):
    """{class: iou} over python sets."""
    n = len(gt)
    out = {}
    for cls in sorted(set(pred) | set(gt)):
        if cls < 0:
            continue
        p = {i for i in range(n) if pred[i] == cls}
        g = {i for i in range(n) if gt[i] == cls}
        if p | g:
            out[cls] = len(p & g) / len(p | g)
    return out


def brute_force_relationship_rank(subj_probs, pred_probs, obj_probs, triplet):
    """1-based rank by full enumeration and lexicographic tie-break."""
    ranked = sorted(
        ((subj_probs[a] * pred_probs[p] * obj_probs[b], (a, p, b))
         for a, p, b in itertools.product(range(len(subj_probs)),
                                          range(len(pred_probs)),
                                          range(len(obj_probs)))),
        key=lambda t: (-t[0], t[1]))
    return 1 + [t for _, t in ranked].index(tuple(triplet))
