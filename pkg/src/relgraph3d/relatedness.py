"""Pairwise relatedness scores and cluster-sampling graph pruning.

For every ordered pair ``(i, j)`` of 2D detections (``i`` the source, ``j``
the target) the score combines

* a geometry weight ``relu(w_g . PE(g_ij))`` where ``g_ij`` is the
  translation- and scale-invariant pair descriptor of :func:`augmented_geometry`
  and ``PE`` the sinusoidal encoding of :func:`positional_encode`;
* a semantic weight, the cosine similarity of the two label embeddings.

Scores are normalized over the incoming edges of each target.  Pruning
clusters the incoming scores of a target with exact 1-D k-means and keeps
the strongest edge of each cluster.

Sparse graph text format (one record per line)::

    graph <n_nodes> <n_edges>
    edge <source> <target> <score>

Edges are grouped by target and listed by descending score within a target.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS_GEO = 1e-3
EPS_DEN = 1e-8
DEFAULT_PE_DIM = 16
TIE_TOL = 1e-12


class RelatednessError(ValueError):
    pass


@dataclass(frozen=True)
class Box2D:
    x: float
    y: float
    w: float
    h: float
    class_id: int = 0
    score: float = 1.0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise RelatednessError(f"2D box needs positive width/height, got {self.w}x{self.h}")

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h, "class_id": self.class_id, "score": self.score}

    @classmethod
    def from_dict(cls, d) -> "Box2D":
        return cls(d["x"], d["y"], d["w"], d["h"], int(d["class_id"]), d["score"])

    def union(self, other: "Box2D") -> tuple[float, float, float, float]:
        x0 = min(self.x - self.w / 2, other.x - other.w / 2)
        x1 = max(self.x + self.w / 2, other.x + other.w / 2)
        y0 = min(self.y - self.h / 2, other.y - other.h / 2)
        y1 = max(self.y + self.h / 2, other.y + other.h / 2)
        return (x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0


class LabelEmbeddingTable:
    """Frozen class-label embeddings standing in for a language model.

    Rows start orthonormal; each class listed in ``related`` is blended with
    its partners so that related labels have cosine similarity >= 0.5.
    """

    def __init__(self, n_classes=10, dim=32, seed=0, related=(), jitter=0.02):
        if dim < n_classes:
            raise RelatednessError("embedding dim must be >= number of classes")
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.standard_normal((dim, n_classes)))
        base = q.T
        table = base.copy()
        partners = {c: set() for c in range(n_classes)}
        for a, b in related:
            partners[a].add(b)
            partners[b].add(a)
        for c in range(n_classes):
            for p in partners[c]:
                table[c] += base[p]
        table += jitter * rng.standard_normal(table.shape)
        table /= np.linalg.norm(table, axis=1, keepdims=True)
        self.table = table
        self.table.setflags(write=False)

    @property
    def n_classes(self) -> int:
        return self.table.shape[0]

    def __getitem__(self, class_id) -> np.ndarray:
        return self.table[class_id]

    def cosine_matrix(self) -> np.ndarray:
        return self.table @ self.table.T


def augmented_geometry(gi: Box2D, gj: Box2D, eps: float = EPS_GEO) -> np.ndarray:
    dx = max(abs(gi.x - gj.x), eps)
    dy = max(abs(gi.y - gj.y), eps)
    return np.array([np.log(dx / gi.w), np.log(dy / gi.h), np.log(gi.w / gj.w), np.log(gi.h / gj.h)])


def pe_wavelengths(d_pe: int = DEFAULT_PE_DIM) -> np.ndarray:
    n = d_pe // 2
    if n == 1:
        return np.array([1.0])
    return 1000.0 ** (np.arange(n) / (n - 1))


def positional_encode(v, d_pe: int = DEFAULT_PE_DIM) -> np.ndarray:
    """Sinusoidal encoding of each component of ``v``.

    Each scalar maps to ``d_pe`` values: ``sin``/``cos`` pairs at ``d_pe/2``
    wavelengths spaced geometrically over ``[1, 1000]``.  Works on a single
    vector or on rows of a 2-D array.
    """
    if d_pe <= 0 or d_pe % 2:
        raise RelatednessError(f"d_pe must be a positive even integer, got {d_pe}")
    v = np.asarray(v, dtype=np.float64)
    ang = 2 * np.pi * v[..., None] / pe_wavelengths(d_pe)
    enc = np.stack([np.sin(ang), np.cos(ang)], axis=-1)
    return enc.reshape(v.shape[:-1] + (v.shape[-1] * d_pe,))


def geometry_weight(eps, w_g) -> float:
    eps, w_g = np.asarray(eps, dtype=np.float64), np.asarray(w_g, dtype=np.float64)
    if eps.shape != w_g.shape:
        raise RelatednessError(f"geometry weight dims differ: {eps.shape} vs {w_g.shape}")
    return max(0.0, float(w_g @ eps))


def semantic_weight(e_i, e_j) -> float:
    ni, nj = np.linalg.norm(e_i), np.linalg.norm(e_j)
    if ni == 0 or nj == 0:
        raise RelatednessError("zero-norm label embedding")
    return float(np.dot(e_i, e_j) / (ni * nj))


def default_geometry_weights(d_pe: int = DEFAULT_PE_DIM, n_components: int = 4) -> np.ndarray:
    """Initial ``w_g`` that is positive on the long-wavelength cosine terms.

    Long-wavelength cosines stay close to 1 for typical descriptors, which
    keeps every geometry weight active at initialization.
    """
    per = np.zeros(d_pe)
    per[-1] = 0.25  # cos at the longest wavelength
    per[-3] = 0.25
    return np.tile(per, n_components)


@dataclass
class RelatednessMatrix:
    scores: np.ndarray
    geometry_w: np.ndarray
    semantic_w: np.ndarray

    @property
    def n(self) -> int:
        return self.scores.shape[0]


def normalize_scores(geometry_w, semantic_w) -> np.ndarray:
    n = geometry_w.shape[0]
    num = geometry_w * np.exp(semantic_w)
    num[np.eye(n, dtype=bool)] = 0.0
    # the guard only floors the denominator, so live columns sum to exactly 1
    return num / np.maximum(num.sum(axis=0, keepdims=True), EPS_DEN)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def relatedness_matrix(boxes, table: LabelEmbeddingTable, w_g, d_pe=DEFAULT_PE_DIM, sigmoid_rescale=False):
    """Scores ``r[i, j]`` of source ``i`` for target ``j``; columns sum to 1."""
    n = len(boxes)
    geo = np.zeros((n, n))
    sem = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            geo[i, j] = geometry_weight(positional_encode(augmented_geometry(boxes[i], boxes[j]), d_pe), w_g)
            sem[i, j] = semantic_weight(table[boxes[i].class_id], table[boxes[j].class_id])
    scores = normalize_scores(geo, sem)
    if sigmoid_rescale:
        scores = _sigmoid(scores)
        np.fill_diagonal(scores, 0.0)
    return RelatednessMatrix(scores, geo, sem)


# ---------------------------------------------------------------- clustering


def _segment_cost(vals, wts, a, b) -> float:
    v, w = vals[a:b], wts[a:b]
    mean = np.dot(v, w) / w.sum()
    return float(np.dot(w, (v - mean) ** 2))


def cluster_scores(scores, k: int) -> list[list[int]]:
    """Optimal 1-D k-means partition of ``scores``.

    Returns clusters as lists of input indices, ordered from the highest
    scores down; within a cluster indices are ordered by descending score then
    ascending index.  Equal scores always share a cluster, so the number of
    clusters is ``min(k, #distinct scores)``.  Among partitions whose cost is
    optimal up to ``TIE_TOL``, the one with the earliest cuts (in descending
    score order) wins.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise RelatednessError("cannot cluster an empty score list")
    if k < 1:
        raise RelatednessError(f"cluster count must be >= 1, got {k}")
    vals, inverse, counts = np.unique(-scores, return_inverse=True, return_counts=True)
    vals = -vals  # distinct values, descending
    wts = counts.astype(np.float64)
    m = len(vals)
    k = min(k, m)
    cuts = optimal_cuts(vals, wts, k)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    bounds = [0] + cuts + [m]
    clusters = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        clusters.append([i for i in order if a <= inverse[i] < b])
    return clusters


def optimal_cuts(vals, wts, k) -> list[int]:
    """Cut positions splitting sorted ``vals`` into ``k`` optimal segments."""
    m = len(vals)
    cost = np.full((m + 1, m + 1), np.inf)
    for a in range(m):
        for b in range(a + 1, m + 1):
            cost[a, b] = _segment_cost(vals, wts, a, b)
    # best[c][a]: cost of splitting the suffix vals[a:] into c segments
    best = np.full((k + 1, m + 1), np.inf)
    best[0, m] = 0.0
    for c in range(1, k + 1):
        for a in range(m - c, -1, -1):
            best[c, a] = min(cost[a, b] + best[c - 1, b] for b in range(a + 1, m - c + 2))
    cuts, a = [], 0
    for c in range(k, 1, -1):
        target = best[c, a]
        for b in range(a + 1, m - c + 2):
            if cost[a, b] + best[c - 1, b] <= target + TIE_TOL:
                cuts.append(b)
                a = b
                break
    return cuts


# ---------------------------------------------------------------- pruning


@dataclass
class SparseSceneGraph:
    n_nodes: int
    edges: list = field(default_factory=list)  # (source, target, rbar)

    def incoming(self, j: int) -> list:
        return [e for e in self.edges if e[1] == j]

    def to_text(self) -> str:
        lines = [f"graph {self.n_nodes} {len(self.edges)}"]
        lines += [f"edge {i} {j} {r!r}" for i, j, r in self.edges]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SparseSceneGraph":
        lines = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
        if not lines or lines[0][0] != "graph":
            raise RelatednessError("missing graph header")
        n, n_edges = int(lines[0][1]), int(lines[0][2])
        edges = [(int(a), int(b), float(r)) for tag, a, b, r in lines[1:] if tag == "edge"]
        if len(edges) != n_edges:
            raise RelatednessError(f"expected {n_edges} edges, found {len(edges)}")
        return cls(n, edges)


def select_incoming(col_scores, sources, k: int) -> list[int]:
    """Sources kept for one target: the best-scoring member of each cluster."""
    if len(sources) <= k:
        return sorted(sources, key=lambda i: (-col_scores[sources.index(i)], i))
    kept = []
    for cluster in cluster_scores(col_scores, k):
        kept.append(sources[cluster[0]])
    return kept


def renormalize(values) -> np.ndarray:
    """Scale to sum 1; all-zero inputs become uniform."""
    values = np.asarray(values, dtype=np.float64)
    total = values.sum()
    if total > 0:
        return values / total
    return np.full(len(values), 1.0 / len(values))


def prune(m: RelatednessMatrix | np.ndarray, k: int = 3, scope: str = "target") -> SparseSceneGraph:
    """Cluster-sampling pruning of a relatedness matrix.

    ``scope="target"`` clusters each target's incoming scores separately;
    ``scope="global"`` clusters all off-diagonal scores together and keeps one
    edge per cluster for the whole scene.
    """
    scores = m.scores if isinstance(m, RelatednessMatrix) else np.asarray(m)
    n = scores.shape[0]
    if k < 1:
        raise RelatednessError(f"cluster count must be >= 1, got {k}")
    kept_pairs = []
    if scope == "target":
        for j in range(n):
            sources = [i for i in range(n) if i != j]
            if not sources:
                continue
            col = [scores[i, j] for i in sources]
            kept_pairs += [(i, j) for i in select_incoming(col, sources, k)]
    elif scope == "global":
        pairs = [(i, j) for j in range(n) for i in range(n) if i != j]
        if pairs:
            vals = [scores[i, j] for i, j in pairs]
            kept_pairs = [pairs[c[0]] for c in cluster_scores(vals, k)]
    else:
        raise RelatednessError(f"unknown pruning scope {scope!r}")
    return _graph_from_pairs(n, kept_pairs, scores)


def dense_graph(n: int) -> SparseSceneGraph:
    """Fully connected directed graph with uniform incoming weights."""
    pairs = [(i, j) for j in range(n) for i in range(n) if i != j]
    return _graph_from_pairs(n, pairs, np.ones((n, n)))


def _graph_from_pairs(n, pairs, scores) -> SparseSceneGraph:
    edges = []
    for j in range(n):
        srcs = sorted((i for i, t in pairs if t == j), key=lambda i: (-scores[i, j], i))
        if not srcs:
            continue
        rbar = renormalize([scores[i, j] for i in srcs])
        edges += [(i, j, float(r)) for i, r in zip(srcs, rbar)]
    return SparseSceneGraph(n, edges)
