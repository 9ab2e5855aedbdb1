"""Edge message passing over a sparse scene graph.

Nodes start from an object MLP over per-object features and pairs from a
relation MLP over pair features; pair embeddings never change afterwards.
One iteration:

1. every retained edge ``i -> j`` gets ``m_ij = [phi(o_i), psi(o_j)] + p_ij W_V``;
2. each target ``j`` runs a GRU over its incoming messages, from the lowest
   to the highest relatedness, starting from a zero state;
3. every node is replaced by ``MLP_upd([o_j, h_j])``, all at once.

The functions work on whole batches: several scenes are stacked into one
block-diagonal graph with global node indices.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .relatedness import Box2D, SparseSceneGraph, augmented_geometry

PAIR_GEOMETRY_DIM = 6 + 4


class GraphError(ValueError):
    pass


# ---------------------------------------------------------------- batched graph


@dataclass
class GraphBatch:
    """Edges of one or more scenes with global node ids.

    ``steps`` / ``masks`` form the aggregation schedule: at step ``t`` node
    ``n`` consumes message ``steps[t, n]`` if ``masks[t, n]``.  Sequences are
    right-aligned so every node ends on its highest-relatedness message.
    """

    n_nodes: int
    src: np.ndarray
    tgt: np.ndarray
    rbar: np.ndarray
    steps: np.ndarray = field(repr=False)
    masks: np.ndarray = field(repr=False)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @classmethod
    def from_edges(cls, n_nodes, edges) -> "GraphBatch":
        edges = list(edges)
        if any(i == j for i, j, _ in edges):
            raise GraphError("self-edges are not allowed")
        src = np.array([e[0] for e in edges], dtype=np.int64)
        tgt = np.array([e[1] for e in edges], dtype=np.int64)
        rbar = np.array([e[2] for e in edges], dtype=np.float64)
        seqs = [[] for _ in range(n_nodes)]
        for e in range(len(edges)):
            seqs[tgt[e]].append(e)
        for j, seq in enumerate(seqs):
            # descending relatedness, ties by source id, then consumed in reverse
            seq.sort(key=lambda e: (-rbar[e], src[e]))
            seqs[j] = seq[::-1]
        length = max((len(s) for s in seqs), default=0)
        steps = np.full((length, n_nodes), len(edges), dtype=np.int64)
        masks = np.zeros((length, n_nodes), dtype=bool)
        for j, seq in enumerate(seqs):
            for k, e in enumerate(seq):
                t = length - len(seq) + k
                steps[t, j] = e
                masks[t, j] = True
        return cls(n_nodes, src, tgt, rbar, steps, masks)

    @classmethod
    def from_graph(cls, graph: SparseSceneGraph) -> "GraphBatch":
        return cls.from_edges(graph.n_nodes, graph.edges)

    @classmethod
    def stack(cls, graphs) -> tuple["GraphBatch", np.ndarray]:
        """Merge scene graphs; returns the batch and each node's scene index."""
        edges, offset, groups = [], 0, []
        for g_idx, g in enumerate(graphs):
            edges += [(i + offset, j + offset, r) for i, j, r in g.edges]
            groups += [g_idx] * g.n_nodes
            offset += g.n_nodes
        return cls.from_edges(offset, edges), np.array(groups, dtype=np.int64)


# ---------------------------------------------------------------- features


def pair_feature(bi: Box2D, bj: Box2D, n_classes: int, image_size=(640, 480)) -> np.ndarray:
    """Union-box geometry, pair descriptor and both class one-hots."""
    w_img, h_img = image_size
    ux, uy, uw, uh = bi.union(bj)
    geo = [ux / w_img - 0.5, uy / h_img - 0.5, uw / w_img, uh / h_img, np.log(uw / w_img), np.log(uh / h_img)]
    onehots = np.zeros(2 * n_classes)
    onehots[bi.class_id] = 1.0
    onehots[n_classes + bj.class_id] = 1.0
    return np.concatenate([geo, augmented_geometry(bi, bj), onehots])


def pair_feature_dim(n_classes: int) -> int:
    return PAIR_GEOMETRY_DIM + 2 * n_classes


# ---------------------------------------------------------------- parameters


def add_graph_params(store: dc.ParamStore, feat_dim, pair_dim, d_model, rng, prefix="gnn"):
    if d_model % 2:
        raise GraphError(f"embedding width must be even, got {d_model}")
    half = d_model // 2
    for name, n_in in (("obj", feat_dim), ("rel", pair_dim)):
        store.add_linear(f"{prefix}.{name}0", n_in, d_model, rng)
        store.add_linear(f"{prefix}.{name}1", d_model, d_model, rng)
        store.add_linear(f"{prefix}.{name}2", d_model, d_model, rng)
    for name in ("phi", "psi"):
        store.add_linear(f"{prefix}.{name}0", d_model, d_model, rng)
        store.add_linear(f"{prefix}.{name}1", d_model, half, rng)
    store.add_linear(f"{prefix}.wv", d_model, d_model, rng, bias=False)
    add_gru_params(store, d_model, d_model, rng, f"{prefix}.gru")
    store.add_linear(f"{prefix}.upd0", 2 * d_model, d_model, rng)
    store.add_linear(f"{prefix}.upd1", d_model, d_model, rng)


def add_gru_params(store: dc.ParamStore, n_in, hidden, rng, prefix):
    for w in dc.GRU_WEIGHTS:
        rows = n_in if w.startswith("w") else hidden
        store.add_linear(f"{prefix}.{w}", rows, hidden, rng, bias=False)
    for b in dc.GRU_BIASES:
        store.add(f"{prefix}.{b}", np.zeros(hidden))


def gru_params(store: dc.ParamStore, prefix) -> dict:
    out = {w: store[f"{prefix}.{w}.w"] for w in dc.GRU_WEIGHTS}
    out.update({b: store[f"{prefix}.{b}"] for b in dc.GRU_BIASES})
    return out


def mlp(x, store: dc.ParamStore, prefix, n_layers):
    """Linear layers ``prefix0 .. prefix{n-1}`` with ReLU between them."""
    for layer in range(n_layers):
        x = dc.linear(x, store[f"{prefix}{layer}.w"], store[f"{prefix}{layer}.b"])
        if layer < n_layers - 1:
            x = dc.relu(x)
    return x


# ---------------------------------------------------------------- operations


def init_nodes(features, store: dc.ParamStore, prefix="gnn") -> dc.Tensor:
    features = np.asarray(features, dtype=np.float64)
    d_model = store[f"{prefix}.obj2.w"].shape[1]
    if features.shape[0] == 0:
        return dc.Tensor(np.zeros((0, d_model)))
    return mlp(features, store, f"{prefix}.obj", 3)


def init_pairs(batch: GraphBatch, pair_features, store: dc.ParamStore, prefix="gnn") -> dc.Tensor:
    """Pair embeddings, one row per edge of ``batch`` (in edge order)."""
    pair_features = np.asarray(pair_features, dtype=np.float64)
    d_model = store[f"{prefix}.rel2.w"].shape[1]
    if batch.n_edges == 0:
        return dc.Tensor(np.zeros((0, d_model)))
    if pair_features.ndim != 2 or pair_features.shape[0] != batch.n_edges:
        raise GraphError(f"need one pair feature per edge ({batch.n_edges}), got shape {pair_features.shape}")
    return mlp(pair_features, store, f"{prefix}.rel", 3)


def message(o_src, o_tgt, p, store: dc.ParamStore, prefix="gnn") -> dc.Tensor:
    """Edge messages for matching rows of source, target and pair embeddings."""
    if o_src.shape != o_tgt.shape or o_src.shape[0] != p.shape[0]:
        raise GraphError(f"message shapes differ: {o_src.shape}, {o_tgt.shape}, {p.shape}")
    proj = dc.concat([mlp(o_src, store, f"{prefix}.phi", 2), mlp(o_tgt, store, f"{prefix}.psi", 2)], axis=-1)
    return proj + dc.linear(p, store[f"{prefix}.wv.w"])


def aggregate(messages, batch: GraphBatch, store: dc.ParamStore, prefix="gnn") -> dc.Tensor:
    """GRU states per node; nodes without incoming edges get zeros."""
    d_model = store[f"{prefix}.gru.u_z.w"].shape[0]
    h = dc.Tensor(np.zeros((batch.n_nodes, d_model)))
    if batch.n_edges == 0:
        return h
    params = gru_params(store, f"{prefix}.gru")
    padded = dc.concat([messages, dc.Tensor(np.zeros((1, d_model)))], axis=0)
    for t in range(batch.steps.shape[0]):
        active = batch.masks[t]
        x = padded[batch.steps[t]]
        h_new = dc.gru_step(h, x, params)
        mask = active[:, None].astype(np.float64)
        h = h + (h_new - h) * mask
    return h


def aggregate_sequence(messages, store: dc.ParamStore, prefix="gnn") -> dc.Tensor:
    """Reference aggregation for one node; ``messages`` sorted by descending relatedness."""
    d_model = store[f"{prefix}.gru.u_z.w"].shape[0]
    h = dc.Tensor(np.zeros(d_model))
    params = gru_params(store, f"{prefix}.gru")
    for m in reversed(list(messages)):
        h = dc.gru_step(h, m, params)
    return h


def update_node(o, h, store: dc.ParamStore, prefix="gnn") -> dc.Tensor:
    if o.shape != h.shape:
        raise GraphError(f"update shapes differ: {o.shape} vs {h.shape}")
    return mlp(dc.concat([o, h], axis=-1), store, f"{prefix}.upd", 2)


def snapshot_hash(t: dc.Tensor) -> str:
    return hashlib.sha256(np.ascontiguousarray(t.data).tobytes()).hexdigest()[:16]


@dataclass
class IterationTrace:
    consumed: list = field(default_factory=list)  # hash of nodes read by each iteration
    produced: list = field(default_factory=list)  # hash of nodes written by each iteration


def run_iterations(batch: GraphBatch, nodes, pairs, store: dc.ParamStore, t_iter: int = 2, prefix="gnn", trace=None):
    """Synchronous message passing; returns ``(nodes, messages)``.

    The messages are those of the last iteration, i.e. computed from the node
    embeddings before the final update.
    """
    if t_iter < 1:
        raise GraphError(f"t_iter must be >= 1, got {t_iter}")
    messages = dc.Tensor(np.zeros((0, nodes.shape[1])))
    for _ in range(t_iter):
        if trace is not None:
            trace.consumed.append(snapshot_hash(nodes))
        if batch.n_edges:
            messages = message(nodes[batch.src], nodes[batch.tgt], pairs, store, prefix)
        h = aggregate(messages, batch, store, prefix)
        nodes = update_node(nodes, h, store, prefix)
        if trace is not None:
            trace.produced.append(snapshot_hash(nodes))
    return nodes, messages
