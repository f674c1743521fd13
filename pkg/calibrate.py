"""Scratch calibration for the desk-scale learning experiment (not shipped)."""
import time

import numpy as np

from scenegraph import datagen, evaluation, spn, training
from scenegraph.config import ModelConfig, PipelineConfig, TrainConfig
from scenegraph.pipeline import run_pipeline

t_start = time.time()
rng = np.random.default_rng(2024)
scenes = []
for k in range(25):
    spec = datagen.random_desk_spec(rng)
    frames, gt = datagen.generate_scene(spec, rng)
    scenes.append((frames, datagen.build_labeled_scene(frames, gt)))
print(f"gen+label: {time.time()-t_start:.1f}s")

train_scenes = [s.training for _, s in scenes[5:]]
held_out = scenes[:5]

model_cfg = ModelConfig.desk_scale(datagen.DESK_CLASSES, datagen.DESK_PREDICATES)
train_cfg = TrainConfig(epochs=30, seed=11)
t0 = time.time()
params, _, curve = training.train(train_scenes, model_cfg, train_cfg,
                                  log=lambda r: print(r) if r["epoch"] % 5 == 0 else None)
print(f"train: {time.time()-t0:.1f}s  final loss {curve[-1]['loss']:.4f}")

# majority baselines from training labels
train_node_labels = [l for s in train_scenes for l in s.node_labels.values()]
train_edge_labels = [l for s in train_scenes for l in s.edge_labels.values()]

pipe_cfg = PipelineConfig(min_segment_points=64,
                          n_sample_points=model_cfg.n_sample_points, seed=3)
reports = []
node_accs, edge_accs = [], []
base_nodes, base_edges = [], []
t0 = time.time()
for frames, labeled in held_out:
    result = run_pipeline(frames, params, pipe_cfg)
    node_probs, edge_probs = evaluation.probs_from_fused(result.fused)
    rep = evaluation.evaluate_scene(labeled, node_probs, edge_probs,
                                    result.fused.cluster_instances())
    reports.append(rep)
    node_accs.append(rep["node_accuracy"])
    edge_accs.append(rep["predicate_accuracy"])
    base_nodes.append(evaluation.majority_baseline(
        train_node_labels, list(labeled.training.node_labels.values())))
    base_edges.append(evaluation.majority_baseline(
        train_edge_labels, list(labeled.training.edge_labels.values())))
print(f"eval: {time.time()-t0:.1f}s")
avg = evaluation.average_reports(reports)
print(f"node acc {np.mean(node_accs):.3f} vs baseline {np.mean(base_nodes):.3f}")
print(f"pred acc {np.mean(edge_accs):.3f} vs baseline {np.mean(base_edges):.3f}")
print(f"PQ(nn) {avg['panoptic_nn']['all']['pq']:.3f} "
      f"SQ {avg['panoptic_nn']['all']['sq']:.3f} RQ {avg['panoptic_nn']['all']['rq']:.3f}")
print(f"segment mIoU {avg['segment_iou']['mean']:.3f}")
print(f"relationship R@1 {avg['relationship_recall']['1']:.3f}")
print(f"TOTAL {time.time()-t_start:.1f}s")

# drop-edge robustness
drop_rng = np.random.default_rng(5)
ious_full, ious_drop = [], []
for frames, labeled in held_out:
    scene = labeled.training
    node_probs, edge_probs = training.predict_scene(params, scene)
    ids = [sid for sid in sorted(scene.nodes) if scene.node_labels.get(sid, -1) >= 0]
    import numpy as _np
    from scenegraph.metrics import mean_iou
    pred = _np.array([int(_np.argmax(node_probs[s])) for s in ids])
    gtl = _np.array([scene.node_labels[s] for s in ids])
    ious_full.append(mean_iou(pred, gtl))
    kept = [e for e in scene.edges if drop_rng.random() >= 0.5]
    node_probs2, _ = training.predict_scene(params, scene, edges=kept)
    pred2 = _np.array([int(_np.argmax(node_probs2[s])) for s in ids])
    ious_drop.append(mean_iou(pred2, gtl))
print(f"drop-edge IoU: full {np.mean(ious_full):.3f} dropped {np.mean(ious_drop):.3f} "
      f"rel deg {(np.mean(ious_full)-np.mean(ious_drop))/max(np.mean(ious_full),1e-9):.3f}")
