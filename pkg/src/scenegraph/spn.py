"""Scene-graph prediction network.

Forward pipeline: a shared per-point MLP with max pooling encodes each
segment's sampled points (normalized to the unit sphere around the segment
centroid); the encoding is concatenated with scale-carrying properties
(std, log bbox, log volume, log length) and projected to the node width.
Edge features embed the 11-dim pairwise property vector. Two message
passing layers then update node and edge features; per-node aggregation is
an elementwise max over feature-wise-attention messages from the neighbors,
and classifiers emit class and predicate logits.

The same building blocks serve three callers: the training forward (on the
tape), the from-scratch forward, and the incremental plan executor that
recomputes only planned cache entries and reuses everything else.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .config import ModelConfig
from .errors import DataError, NumericError
from .scene_map import SegmentState

LOG_CLAMP = 1e-6
CHECKPOINT_MAGIC = b"SGCKPT01"


# -- parameters ---------------------------------------------------------------


class SpnParameters:
    """Named parameter tensors of the network, in creation order."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.tensors: dict[str, Var] = {}
        self._order: list[str] = []

    def _add(self, name: str, arr: np.ndarray) -> None:
        self.tensors[name] = ad.param(arr)
        self._order.append(name)

    def names(self) -> list[str]:
        return list(self._order)

    def __getitem__(self, name: str) -> Var:
        return self.tensors[name]

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: self.tensors[n].data for n in self._order}

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def validate_shapes(self) -> None:
        expected = expected_shapes(self.config)
        if set(expected) != set(self.tensors):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise DataError(f"parameter names mismatch: missing={missing} extra={extra}")
        for name, shape in expected.items():
            got = self.tensors[name].data.shape
            if tuple(got) != tuple(shape):
                raise DataError(f"tensor {name}: shape {got}, expected {shape}")


def expected_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """The full name -> shape map, the single source of shape truth."""
    shapes: dict[str, tuple[int, ...]] = {}
    prev = cfg.point_dim
    for k, width in enumerate(cfg.encoder_widths):
        shapes[f"enc{k}.w"] = (prev, width)
        shapes[f"enc{k}.b"] = (width,)
        prev = width
    shapes["node_proj.w"] = (cfg.node_raw_dim, cfg.d_node)
    shapes["node_proj.b"] = (cfg.d_node,)
    gs_hidden = cfg.resolve("gs_hidden")
    shapes["gs0.w"] = (cfg.edge_raw_dim, gs_hidden)
    shapes["gs0.b"] = (gs_hidden,)
    shapes["gs1.w"] = (gs_hidden, cfg.d_edge)
    shapes["gs1.b"] = (cfg.d_edge,)
    h = cfg.heads
    dq_h = cfg.d_query // h
    dt_h = cfg.d_target // h
    gv_hidden = cfg.resolve("gv_hidden")
    ge_hidden = cfg.resolve("ge_hidden")
    for layer in range(1, cfg.n_layers + 1):
        p = f"layer{layer}."
        shapes[p + "gq.w"] = (cfg.d_node, cfg.d_query // 2)
        shapes[p + "gq.b"] = (cfg.d_query // 2,)
        shapes[p + "gep.w"] = (cfg.d_edge, cfg.d_query // 2)
        shapes[p + "gep.b"] = (cfg.d_query // 2,)
        shapes[p + "gt.w"] = (cfg.d_node, cfg.d_target)
        shapes[p + "gt.b"] = (cfg.d_target,)
        shapes[p + "ga0.w"] = (h, dq_h, dq_h)
        shapes[p + "ga0.b"] = (h, dq_h)
        shapes[p + "ga1.w"] = (h, dq_h, dt_h)
        shapes[p + "ga1.b"] = (h, dt_h)
        shapes[p + "gv0.w"] = (cfg.d_node + cfg.d_target, gv_hidden)
        shapes[p + "gv0.b"] = (gv_hidden,)
        shapes[p + "gv1.w"] = (gv_hidden, cfg.d_node)
        shapes[p + "gv1.b"] = (cfg.d_node,)
        shapes[p + "ge0.w"] = (2 * cfg.d_node + cfg.d_edge, ge_hidden)
        shapes[p + "ge0.b"] = (ge_hidden,)
        shapes[p + "ge1.w"] = (ge_hidden, cfg.d_edge)
        shapes[p + "ge1.b"] = (cfg.d_edge,)
    ncls_hidden = cfg.resolve("node_cls_hidden")
    pcls_hidden = cfg.resolve("pred_cls_hidden")
    shapes["cls_node0.w"] = (cfg.d_node, ncls_hidden)
    shapes["cls_node0.b"] = (ncls_hidden,)
    shapes["cls_node1.w"] = (ncls_hidden, cfg.n_classes)
    shapes["cls_node1.b"] = (cfg.n_classes,)
    shapes["cls_pred0.w"] = (cfg.d_edge, pcls_hidden)
    shapes["cls_pred0.b"] = (pcls_hidden,)
    shapes["cls_pred1.w"] = (pcls_hidden, cfg.n_predicates)
    shapes["cls_pred1.b"] = (cfg.n_predicates,)
    return shapes


def build_parameters(config: ModelConfig, seed: int = 0) -> SpnParameters:
    """Initialize all tensors: weights uniform in +-sqrt(6/(fan_in+fan_out)),
    biases zero."""
    rng = np.random.default_rng(seed)
    params = SpnParameters(config)
    for name, shape in expected_shapes(config).items():
        if name.endswith(".b"):
            params._add(name, np.zeros(shape))
        else:
            fan_in, fan_out = shape[-2], shape[-1]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            params._add(name, rng.uniform(-bound, bound, size=shape))
    params.validate_shapes()
    return params


# -- feature construction ------------------------------------------------------


def normalize_sample(state: SegmentState, cfg: ModelConfig) -> np.ndarray:
    """Center the sampled points at the segment centroid and scale the max
    radius to one; attach normal/color channels when configured."""
    pos = state.samples[:, 0:3] - state.centroid
    radius = np.linalg.norm(pos, axis=1).max(initial=0.0)
    if radius > 0:
        pos = pos / radius
    channels = [pos]
    if cfg.use_normals:
        channels.append(state.samples[:, 3:6])
    if cfg.use_colors:
        channels.append(state.samples[:, 6:9])
    return np.concatenate(channels, axis=1) if len(channels) > 1 else pos


def _log_props(state: SegmentState) -> np.ndarray:
    """[std, ln bbox, ln volume, ln length] with extents clamped at 1e-6."""
    b = np.maximum(state.bbox, LOG_CLAMP)
    log_b = np.log(b)
    return np.concatenate([state.std, log_b, [log_b.sum()], [np.log(max(state.length, LOG_CLAMP))]])


def _mlp(x: Var, params: SpnParameters, names: list[str]) -> Var:
    """FC layers with ReLU between them (none after the last)."""
    for k, name in enumerate(names):
        if k:
            x = ad.relu(x)
        x = ad.linear(x, params[name + ".w"], params[name + ".b"])
    return x


def encode_segments(params: SpnParameters, states: list[SegmentState]) -> Var:
    """Point-set encoder over a batch of segments -> (S, enc_out)."""
    cfg = params.config
    blocks = [normalize_sample(s, cfg) for s in states]
    counts = [b.shape[0] for b in blocks]
    if min(counts, default=1) == 0:
        raise DataError("cannot encode a segment with zero sampled points")
    x = ad.const(np.concatenate(blocks, axis=0))
    enc_names = [f"enc{k}" for k in range(len(cfg.encoder_widths))]
    per_point = _mlp(x, params, enc_names)
    offsets = np.cumsum([0] + counts)
    groups = [np.arange(lo, hi) for lo, hi in zip(offsets[:-1], offsets[1:])]
    return ad.grouped_max(per_point, groups)


def node_init_features(params: SpnParameters, states: list[SegmentState]) -> Var:
    """Encoder output concatenated with property terms, projected to d_node."""
    enc = encode_segments(params, states)
    props = ad.const(np.stack([_log_props(s) for s in states]))
    raw = ad.concat([enc, props], axis=1)
    return ad.linear(raw, params["node_proj.w"], params["node_proj.b"])


def pair_vector(si: SegmentState, sj: SegmentState) -> np.ndarray:
    """The 11-dim directed pair descriptor between two segments."""
    if si.id == sj.id:
        raise DataError(f"self-edge on segment {si.id}")
    li = np.log(max(si.length, LOG_CLAMP)) - np.log(max(sj.length, LOG_CLAMP))
    bi = np.log(np.maximum(si.bbox, LOG_CLAMP))
    bj = np.log(np.maximum(sj.bbox, LOG_CLAMP))
    lv = bi.sum() - bj.sum()
    return np.concatenate([
        si.centroid - sj.centroid,
        si.std - sj.std,
        si.bbox - sj.bbox,
        [li], [lv],
    ])


def edge_init_features(params: SpnParameters,
                       pairs: list[tuple[SegmentState, SegmentState]]) -> Var:
    raw = ad.const(np.stack([pair_vector(a, b) for a, b in pairs]))
    return _mlp(raw, params, ["gs0", "gs1"])


# -- attention -----------------------------------------------------------------


def fat(query: Var, target: Var, w0: Var, b0: Var, w1: Var, b1: Var) -> Var:
    """Feature-wise attention: softmax(mlp(query)) elementwise-times target.

    The softmax runs across the target's feature dimension, so the weight
    vector of each row sums to one.
    """
    hidden = ad.relu(ad.linear(query, w0, b0))
    logits = ad.linear(hidden, w1, b1)
    return ad.mul(ad.softmax(logits, axis=-1), target)


def mfat(query: Var, target: Var, heads: int,
         w0: Var, b0: Var, w1: Var, b1: Var) -> Var:
    """Multi-head feature-wise attention with independent per-head maps.

    query (n, d_q) and target (n, d_t) are split into `heads` contiguous
    chunks; each head applies its own attention, and outputs concatenate
    back to d_t.
    """
    n, dq = query.data.shape
    dt = target.data.shape[1]
    qh = ad.reshape(query, (n, heads, dq // heads))
    th = ad.reshape(target, (n, heads, dt // heads))
    hidden = ad.relu(ad.head_linear(qh, w0, b0))
    logits = ad.head_linear(hidden, w1, b1)
    weighted = ad.mul(ad.softmax(logits, axis=-1), th)
    return ad.reshape(weighted, (n, dt))


def fan(params: SpnParameters, layer: int,
        v_src: Var, e: Var, v_dst: Var) -> Var:
    """Attention message: query = [proj(source node), proj(edge)], target =
    proj(neighbor node). Output has the target width."""
    p = f"layer{layer}."
    q = ad.concat([
        ad.linear(v_src, params[p + "gq.w"], params[p + "gq.b"]),
        ad.linear(e, params[p + "gep.w"], params[p + "gep.b"]),
    ], axis=1)
    t = ad.linear(v_dst, params[p + "gt.w"], params[p + "gt.b"])
    return mfat(q, t, params.config.heads,
                params[p + "ga0.w"], params[p + "ga0.b"],
                params[p + "ga1.w"], params[p + "ga1.b"])


def node_update(params: SpnParameters, layer: int, v: Var, agg: Var) -> Var:
    p = f"layer{layer}."
    return _mlp(ad.concat([v, agg], axis=1), params, [p + "gv0", p + "gv1"])


def edge_update(params: SpnParameters, layer: int,
                v_src: Var, e: Var, v_dst: Var) -> Var:
    p = f"layer{layer}."
    return _mlp(ad.concat([v_src, e, v_dst], axis=1), params, [p + "ge0", p + "ge1"])


def classify_nodes(params: SpnParameters, v: Var) -> Var:
    return _mlp(v, params, ["cls_node0", "cls_node1"])


def classify_edges(params: SpnParameters, e: Var) -> Var:
    return _mlp(e, params, ["cls_pred0", "cls_pred1"])


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# -- batch forward (training and full-graph oracle) ----------------------------


def gnn_layer(params: SpnParameters, layer: int, v: Var, e: Var,
              src: np.ndarray, dst: np.ndarray,
              groups: list[np.ndarray]) -> tuple[Var, Var]:
    """One synchronous message passing step over index-based edges.

    `groups[n]` lists the edge rows whose source is node n (its messages);
    nodes without neighbors aggregate the zero vector.
    """
    if len(src):
        msgs = fan(params, layer,
                   ad.gather_rows(v, src), e, ad.gather_rows(v, dst))
        agg = ad.grouped_max(msgs, groups)
        e_next = edge_update(params, layer,
                             ad.gather_rows(v, src), e, ad.gather_rows(v, dst))
    else:
        agg = ad.const(np.zeros((v.data.shape[0], params.config.d_target)))
        e_next = e
    v_next = node_update(params, layer, v, agg)
    return v_next, e_next


def edge_groups(n_nodes: int, src: np.ndarray) -> list[np.ndarray]:
    """Row indices per source node; src must be sorted ascending."""
    groups = [np.array([], dtype=np.intp)] * n_nodes
    if len(src):
        starts = np.searchsorted(src, np.arange(n_nodes), side="left")
        ends = np.searchsorted(src, np.arange(n_nodes), side="right")
        groups = [np.arange(a, b) for a, b in zip(starts, ends)]
    return groups


def forward_batch(params: SpnParameters, states: list[SegmentState],
                  edges: list[tuple[int, int]]) -> tuple[Var, Var]:
    """Full forward over an index-based subgraph.

    `edges` hold (src, dst) positions into `states` and should contain both
    directions of every undirected link. Returns node and edge logits; edge
    logits rows follow the sorted edge order.
    """
    order = sorted(range(len(edges)), key=lambda k: edges[k])
    edges_sorted = [edges[k] for k in order]
    if sorted(edges) != edges_sorted or len(set(edges)) != len(edges):
        raise DataError("edges must be unique; pass any order, rows are sorted")
    src = np.array([a for a, _ in edges_sorted], dtype=np.intp)
    dst = np.array([b for _, b in edges_sorted], dtype=np.intp)
    v = node_init_features(params, states)
    if len(edges_sorted):
        e = edge_init_features(params, [(states[a], states[b]) for a, b in edges_sorted])
    else:
        e = ad.const(np.zeros((0, params.config.d_edge)))
    groups = edge_groups(len(states), src)
    for layer in range(1, params.config.n_layers + 1):
        v, e = gnn_layer(params, layer, v, e, src, dst, groups)
    return classify_nodes(params, v), classify_edges(params, e)


# -- prediction container -------------------------------------------------------


@dataclass
class Prediction:
    """Per-node class distributions and per-directed-edge predicate
    distributions from one pass, plus lightweight per-node metadata used by
    the fuser (point count and shape summary)."""

    frame: int
    node_probs: dict[int, np.ndarray]
    edge_probs: dict[tuple[int, int], np.ndarray]
    node_info: dict[int, dict] = field(default_factory=dict)


def node_info_of(state: SegmentState) -> dict:
    return {
        "count": state.count,
        "centroid": state.centroid.tolist(),
        "bbox": state.bbox.tolist(),
        "length": state.length,
        "volume": state.volume,
    }


# -- layered feature cache and incremental execution ----------------------------


@dataclass
class FeatureCache:
    """Per-layer features kept between passes: node[layer][id],
    edge[layer][(i, j)], plus classifier output distributions."""

    n_layers: int
    node: list[dict[int, np.ndarray]] = field(default_factory=list)
    edge: list[dict[tuple[int, int], np.ndarray]] = field(default_factory=list)
    node_probs: dict[int, np.ndarray] = field(default_factory=dict)
    edge_probs: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.node:
            self.node = [dict() for _ in range(self.n_layers + 1)]
        if not self.edge:
            self.edge = [dict() for _ in range(self.n_layers + 1)]

    def drop_node(self, node_id: int) -> None:
        for layer in self.node:
            layer.pop(node_id, None)
        self.node_probs.pop(node_id, None)

    def drop_edge(self, i: int, j: int) -> None:
        for layer in self.edge:
            layer.pop((i, j), None)
            layer.pop((j, i), None)
        self.edge_probs.pop((i, j), None)
        self.edge_probs.pop((j, i), None)


@dataclass
class RecomputeCounters:
    """How many items each stage actually computed (mirrors the plan)."""

    node_feature: int = 0
    edge_feature: int = 0
    gnn_nodes: list[int] = field(default_factory=list)
    gnn_edges: list[int] = field(default_factory=list)
    classify_nodes: int = 0
    classify_edges: int = 0

    def ensure_layers(self, n_layers: int) -> None:
        while len(self.gnn_nodes) < n_layers:
            self.gnn_nodes.append(0)
            self.gnn_edges.append(0)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d


def run_plan(params: SpnParameters, states: dict[int, SegmentState],
             adj: dict[int, set[int]], plan, cache: FeatureCache,
             counters: RecomputeCounters | None = None,
             timings: dict | None = None) -> None:
    """Execute a recomputation plan against the cache, in place.

    plan.nodes[l] / plan.edges[l] name the entries whose layer-l features
    must be recomputed; everything else is reused verbatim. After execution
    every touched entry equals what a from-scratch forward would produce.
    When given, `timings` accumulates wall-clock seconds per stage.
    """
    import time as _time

    def clock(stage, started):
        if timings is not None:
            timings[stage] = timings.get(stage, 0.0) + _time.perf_counter() - started

    cfg = params.config
    n_layers = cfg.n_layers
    if counters is not None:
        counters.ensure_layers(n_layers)
    with ad.no_grad():
        t0 = _time.perf_counter()
        ids0 = sorted(plan.nodes[0])
        if ids0:
            feats = node_init_features(params, [states[i] for i in ids0]).data
            for k, i in enumerate(ids0):
                cache.node[0][i] = feats[k]
            if counters is not None:
                counters.node_feature += len(ids0)
        clock("node_feature", t0)
        t0 = _time.perf_counter()
        pairs0 = sorted(plan.edges[0])
        if pairs0:
            feats = edge_init_features(
                params, [(states[a], states[b]) for a, b in pairs0]).data
            for k, pair in enumerate(pairs0):
                cache.edge[0][pair] = feats[k]
            if counters is not None:
                counters.edge_feature += len(pairs0)
        clock("edge_feature", t0)

        for layer in range(1, n_layers + 1):
            t0 = _time.perf_counter()
            below_n = cache.node[layer - 1]
            below_e = cache.edge[layer - 1]
            ids = sorted(plan.nodes[layer])
            if ids:
                rows: list[tuple[int, int]] = []
                groups = []
                for i in ids:
                    nbrs = sorted(adj.get(i, ()))
                    groups.append(np.arange(len(rows), len(rows) + len(nbrs)))
                    rows.extend((i, j) for j in nbrs)
                v_self = ad.const(np.stack([below_n[i] for i in ids]))
                if rows:
                    v_src = ad.const(np.stack([below_n[i] for i, _ in rows]))
                    e_in = ad.const(np.stack([below_e[r] for r in rows]))
                    v_dst = ad.const(np.stack([below_n[j] for _, j in rows]))
                    msgs = fan(params, layer, v_src, e_in, v_dst)
                    agg = ad.grouped_max(msgs, groups)
                else:
                    agg = ad.const(np.zeros((len(ids), cfg.d_target)))
                out = node_update(params, layer, v_self, agg).data
                for k, i in enumerate(ids):
                    cache.node[layer][i] = out[k]
                if counters is not None:
                    counters.gnn_nodes[layer - 1] += len(ids)
            pairs = sorted(plan.edges[layer])
            if pairs:
                v_src = ad.const(np.stack([below_n[a] for a, _ in pairs]))
                e_in = ad.const(np.stack([below_e[p] for p in pairs]))
                v_dst = ad.const(np.stack([below_n[b] for _, b in pairs]))
                out = edge_update(params, layer, v_src, e_in, v_dst).data
                for k, pair in enumerate(pairs):
                    cache.edge[layer][pair] = out[k]
                if counters is not None:
                    counters.gnn_edges[layer - 1] += len(pairs)
            clock(f"gnn{layer}", t0)

        t0 = _time.perf_counter()
        ids_top = sorted(plan.nodes[n_layers])
        if ids_top:
            logits = classify_nodes(
                params, ad.const(np.stack([cache.node[n_layers][i] for i in ids_top]))).data
            probs = softmax_rows(logits)
            for k, i in enumerate(ids_top):
                cache.node_probs[i] = probs[k]
            if counters is not None:
                counters.classify_nodes += len(ids_top)
        pairs_top = sorted(plan.edges[n_layers])
        if pairs_top:
            logits = classify_edges(
                params, ad.const(np.stack([cache.edge[n_layers][p] for p in pairs_top]))).data
            probs = softmax_rows(logits)
            for k, pair in enumerate(pairs_top):
                cache.edge_probs[pair] = probs[k]
            if counters is not None:
                counters.classify_edges += len(pairs_top)
        clock("classify", t0)


@dataclass
class FullPlan:
    """A plan covering every node and directed edge at every layer."""

    nodes: list[set[int]]
    edges: list[set[tuple[int, int]]]


def full_plan(states: dict[int, SegmentState], adj: dict[int, set[int]],
              n_layers: int) -> FullPlan:
    all_nodes = set(states)
    all_edges = {(i, j) for i, nbrs in adj.items() for j in nbrs}
    return FullPlan(nodes=[set(all_nodes) for _ in range(n_layers + 1)],
                    edges=[set(all_edges) for _ in range(n_layers + 1)])


def full_forward(params: SpnParameters, states: dict[int, SegmentState],
                 adj: dict[int, set[int]]) -> FeatureCache:
    """From-scratch forward over a whole graph; the oracle for cache reuse."""
    cache = FeatureCache(n_layers=params.config.n_layers)
    run_plan(params, states, adj, full_plan(states, adj, params.config.n_layers), cache)
    return cache


def prediction_from_cache(cache: FeatureCache, frame: int,
                          node_ids, edges,
                          states: dict[int, SegmentState]) -> Prediction:
    """Assemble the Prediction for a snapshot scope from cached classifier
    outputs."""
    return Prediction(
        frame=frame,
        node_probs={i: cache.node_probs[i].copy() for i in sorted(node_ids)},
        edge_probs={e: cache.edge_probs[e].copy() for e in sorted(edges)},
        node_info={i: node_info_of(states[i]) for i in sorted(node_ids)},
    )


# -- single-item convenience wrappers (used by tests) ---------------------------


def encode_points(params: SpnParameters, state: SegmentState) -> np.ndarray:
    with ad.no_grad():
        return encode_segments(params, [state]).data[0]


def node_feature(params: SpnParameters, state: SegmentState) -> np.ndarray:
    with ad.no_grad():
        return node_init_features(params, [state]).data[0]


def edge_feature(params: SpnParameters, si: SegmentState,
                 sj: SegmentState) -> np.ndarray:
    with ad.no_grad():
        return edge_init_features(params, [(si, sj)]).data[0]


# -- checkpoint io ---------------------------------------------------------------


def save_checkpoint(path: str, params: SpnParameters,
                    extra_arrays: dict[str, np.ndarray] | None = None,
                    extra_meta: dict | None = None) -> None:
    """Write a manifest (name, shape, byte offset) plus a flat little-endian
    float64 blob. Round-trips are bit-exact."""
    entries = []
    blobs = []
    offset = 0
    items = [(n, params.tensors[n].data) for n in params.names()]
    for name, arr in sorted((extra_arrays or {}).items()):
        items.append(("extra." + name, np.asarray(arr, dtype=np.float64)))
    for name, arr in items:
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape),
                        "dtype": "<f8", "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format": 1,
        "model_config": params.config.to_dict(),
        "tensors": entries,
        "meta": extra_meta or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path: str) -> tuple[SpnParameters, dict[str, np.ndarray], dict]:
    """Read a checkpoint; shapes are validated against the embedded config."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        blob = fh.read()
    config = ModelConfig.from_dict(header["model_config"])
    params = SpnParameters(config)
    extra: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        name, shape, offset = entry["name"], entry["shape"], entry["offset"]
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size,
                            offset=offset).reshape(shape).copy()
        if not np.isfinite(arr).all():
            raise NumericError(f"{path}: tensor {name} contains NaN/Inf")
        if name.startswith("extra."):
            extra[name[len("extra."):]] = arr
        else:
            params._add(name, arr)
    params.validate_shapes()
    return params, extra, header.get("meta", {})
