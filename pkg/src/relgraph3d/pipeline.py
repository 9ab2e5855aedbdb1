"""End-to-end model: scene graph, message passing, decoders, losses, training.

A training step on a batch of scenes:

* score every ordered object pair with the current geometry weights, prune
  (or keep the dense graph) and renormalize the kept scores per target;
* run message passing over the stacked scene graphs;
* decode independent camera-space parameters per node and a relative
  transform per kept edge;
* combine the individual, direct relative, holistic, corner and physical
  losses and take an Adam step.

Holistic and corner terms chain each predicted relative transform with the
ground-truth frame of the source object; at inference the chain starts
from the source's own independent prediction.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .config import RunConfig, ablation_config
from .decode import (
    ObjectPrediction,
    RelativePrediction,
    add_object_decoder,
    add_relative_decoder,
    compose_yaw_params,
    confidences,
    decode_params,
    holistic_fuse,
    object_decode,
    relative_decode,
    relative_from_gt,
)
from .evaluation import (
    Detection,
    GroundTruth,
    ablation_row,
    average_precision,
    format_report,
    format_table,
    pose_errors,
)
from .geometry import Box3D, box_corners, camera_rotation, camera_to_world
from .graphnet import GraphBatch, add_graph_params, init_nodes, init_pairs, pair_feature, pair_feature_dim, run_iterations
from .loss import (
    LOSS_COLUMNS,
    box_corners_t,
    combine,
    corner_loss,
    direct_relative_loss,
    holistic_loss,
    individual_loss,
    physical_violation_t,
)
from .relatedness import (
    EPS_DEN,
    LabelEmbeddingTable,
    SparseSceneGraph,
    augmented_geometry,
    default_geometry_weights,
    positional_encode,
    prune,
)
from .synthscene import CLASS_NAMES, OBJECT_FEATURE_DIM, RELATED_CLASSES, Dataset, SceneSample

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch",) + LOSS_COLUMNS + ("n_clamped",)
EMBED_DIM = 32


class TrainingError(RuntimeError):
    pass


class NonFiniteLossError(TrainingError):
    pass


def label_table(seed: int = 0) -> LabelEmbeddingTable:
    related = [(CLASS_NAMES.index(a), CLASS_NAMES.index(b)) for a, b in RELATED_CLASSES]
    return LabelEmbeddingTable(len(CLASS_NAMES), EMBED_DIM, seed=seed, related=related)


# ---------------------------------------------------------------- per-scene cache


@dataclass
class SceneCache:
    """Everything about one scene that does not depend on learned weights."""

    scene: SceneSample
    features: np.ndarray
    pairs: np.ndarray  # (P, 2) ordered (source, target)
    pe: np.ndarray  # (P, 4 * d_pe)
    sem: np.ndarray  # (P,)
    pair_feats: np.ndarray
    gt_rel: np.ndarray  # (P, 7): dC, dS_log, dTheta
    distance: np.ndarray
    size: np.ndarray
    yaw_cam: np.ndarray
    delta: np.ndarray
    c2d: np.ndarray
    kinv: np.ndarray  # (n, 3, 3)
    rot: np.ndarray  # (n, 3, 3)
    gt_yaw: np.ndarray
    gt_centroid: np.ndarray
    gt_size: np.ndarray
    gt_corners: np.ndarray

    @property
    def n(self) -> int:
        return len(self.scene.objects)

    @property
    def gt_boxes(self) -> list[Box3D]:
        return [o.box3d for o in self.scene.objects]


def build_cache(scene: SceneSample, table: LabelEmbeddingTable, cfg: RunConfig) -> SceneCache:
    objs = scene.objects
    n = len(objs)
    image_size = (2.0 * scene.intrinsics[0, 2], 2.0 * scene.intrinsics[1, 2])
    pairs = np.array([(i, j) for j in range(n) for i in range(n) if i != j], dtype=np.int64).reshape(-1, 2)
    pe = np.array([positional_encode(augmented_geometry(objs[i].box2d, objs[j].box2d), cfg.d_pe) for i, j in pairs])
    emb = table.table
    sem = np.array([float(emb[objs[i].class_id] @ emb[objs[j].class_id]) for i, j in pairs])
    pair_feats = np.array([pair_feature(objs[i].box2d, objs[j].box2d, len(CLASS_NAMES), image_size) for i, j in pairs])
    gt_rel = []
    for i, j in pairs:
        r = relative_from_gt(objs[i].box3d, objs[j].box3d, cfg.compose_order)
        gt_rel.append(np.concatenate([r.delta_c, r.delta_s_log, [r.delta_theta]]))
    rot = camera_rotation(scene.pose)
    kinv = np.linalg.inv(scene.intrinsics)
    return SceneCache(
        scene=scene,
        features=np.array([o.feature for o in objs]),
        pairs=pairs,
        pe=pe.reshape(len(pairs), 4 * cfg.d_pe),
        sem=sem,
        pair_feats=pair_feats.reshape(len(pairs), pair_feature_dim(len(CLASS_NAMES))),
        gt_rel=np.array(gt_rel).reshape(len(pairs), 7),
        distance=np.array([o.camera_params.distance_d for o in objs]),
        size=np.array([o.camera_params.size_s for o in objs]),
        yaw_cam=np.array([o.camera_params.yaw_theta_cam for o in objs]),
        delta=np.array([o.camera_params.offset_delta for o in objs]),
        c2d=np.array([(o.box2d.x, o.box2d.y) for o in objs]),
        kinv=np.repeat(kinv[None], n, axis=0),
        rot=np.repeat(rot[None], n, axis=0),
        gt_yaw=np.array([o.box3d.yaw for o in objs]),
        gt_centroid=np.array([o.box3d.centroid for o in objs]),
        gt_size=np.array([o.box3d.size for o in objs]),
        gt_corners=np.array([box_corners(o.box3d) for o in objs]),
    )


def _cat(arrays, width=None):
    arrays = [a for a in arrays if a.size]
    if not arrays:
        return np.zeros((0,) if width is None else (0, width))
    return np.concatenate(arrays, axis=0)


# ---------------------------------------------------------------- model


@dataclass
class BatchGraph:
    """Stacked graph of a batch plus the differentiable kept-edge weights."""

    batch: GraphBatch
    groups: np.ndarray  # scene index per node
    offsets: np.ndarray  # first global node id per scene
    pair_index: np.ndarray  # kept edge -> row in the stacked dense pair list
    rbar: dc.Tensor
    graphs: list  # per-scene SparseSceneGraph with local ids


@dataclass
class ForwardResult:
    parts: dict
    total: dc.Tensor
    n_clamped: int
    graph: BatchGraph
    pred: ObjectPrediction
    relative: object = None


class RelationalDetector:
    """Parameters plus forward, loss and prediction for a run configuration."""

    def __init__(self, cfg: RunConfig, feat_dim: int = OBJECT_FEATURE_DIM):
        self.cfg = cfg
        self.specs = cfg.decoder_specs
        self.table = label_table()
        rng = np.random.default_rng(cfg.seed)
        self.store = dc.ParamStore()
        self.store.add("rel.w_g", default_geometry_weights(cfg.d_pe))
        add_graph_params(self.store, feat_dim, pair_feature_dim(len(CLASS_NAMES)), cfg.d_model, rng)
        add_object_decoder(self.store, cfg.d_model, self.specs, rng)
        add_relative_decoder(self.store, cfg.d_model, rng)
        self._caches = {}

    # -- caching

    def cache(self, scene: SceneSample) -> SceneCache:
        key = (scene.scene_id, scene.seed, id(scene))
        if key not in self._caches:
            self._caches[key] = build_cache(scene, self.table, self.cfg)
        return self._caches[key]

    def clear_cache(self):
        self._caches.clear()

    # -- graph construction

    def w_g(self) -> dc.Tensor:
        w = self.store["rel.w_g"]
        return w if self.cfg.learn_wg else dc.Tensor(w.data)

    def build_graph(self, caches: list[SceneCache], forced=None) -> BatchGraph:
        """Scene graphs for a batch.

        ``forced`` optionally gives, per scene, the local ``(source, target)``
        pairs to keep in place of the pruning result; their weights are still
        the renormalized relatedness scores.
        """
        sizes = np.array([c.n for c in caches], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        groups = np.repeat(np.arange(len(caches)), sizes)
        n_total = int(sizes.sum())
        dense = _cat([c.pairs + off for c, off in zip(caches, offsets)], 2).astype(np.int64)
        pair_offsets = np.concatenate([[0], np.cumsum([len(c.pairs) for c in caches])]).astype(np.int64)
        if len(dense) == 0:
            batch = GraphBatch.from_edges(n_total, [])
            graphs = [SparseSceneGraph(c.n, []) for c in caches]
            return BatchGraph(batch, groups, offsets, np.zeros(0, dtype=np.int64), dc.Tensor(np.zeros(0)), graphs)

        if not self.cfg.prune and forced is None:
            keep = np.arange(len(dense))
            counts = np.bincount(dense[:, 1], minlength=n_total)
            rbar = dc.Tensor(1.0 / counts[dense[:, 1]])
        else:
            pe = _cat([c.pe for c in caches], 4 * self.cfg.d_pe)
            sem = _cat([c.sem for c in caches])
            omega = dc.relu((self.w_g() * pe).sum(axis=1)) * np.exp(sem)
            denom = dc.index_add(omega, dense[:, 1], n_total)[dense[:, 1]]
            scores = omega / (denom + np.maximum(EPS_DEN - denom.data, 0.0))
            if self.cfg.sigmoid_rescale:
                scores = dc.sigmoid(scores)
            keep = []
            for s, c in enumerate(caches):
                lo, hi = pair_offsets[s], pair_offsets[s + 1]
                m = np.zeros((c.n, c.n))
                m[c.pairs[:, 0], c.pairs[:, 1]] = scores.data[lo:hi]
                local = {(int(i), int(j)): p for p, (i, j) in enumerate(c.pairs)}
                if forced is not None:
                    chosen = [(int(i), int(j)) for i, j in forced[s]]
                else:
                    chosen = [(i, j) for i, j, _ in prune(m, self.cfg.k_clusters, self.cfg.prune_scope).edges]
                keep += [lo + local[pair] for pair in chosen]
            keep = np.array(keep, dtype=np.int64)
            kept = scores[keep]
            tgt = dense[keep, 1]
            sums = dc.index_add(kept, tgt, n_total)[tgt]
            zero = sums.data <= 0
            if zero.any():
                # all-zero columns fall back to uniform weights
                counts = np.bincount(tgt, minlength=n_total)[tgt]
                kept = kept + np.where(zero, 1.0, 0.0)
                sums = sums + np.where(zero, counts, 0.0)
            rbar = kept / sums

        kept_pairs = dense[keep]
        edges = [(int(i), int(j), float(r)) for (i, j), r in zip(kept_pairs, rbar.data)]
        batch = GraphBatch.from_edges(n_total, edges)
        graphs = []
        for s, c in enumerate(caches):
            mine = groups[kept_pairs[:, 1]] == s
            graphs.append(
                SparseSceneGraph(
                    c.n,
                    sorted(
                        [(i - offsets[s], j - offsets[s], r) for (i, j, r), m in zip(edges, mine) if m],
                        key=lambda e: (e[1], -e[2], e[0]),
                    ),
                )
            )
        return BatchGraph(batch, groups, offsets, keep, rbar, graphs)

    # -- forward

    def encode(self, caches: list[SceneCache], bg: BatchGraph):
        features = _cat([c.features for c in caches], OBJECT_FEATURE_DIM)
        pf = _cat([c.pair_feats for c in caches], pair_feature_dim(len(CLASS_NAMES)))
        nodes = init_nodes(features, self.store)
        pairs = init_pairs(bg.batch, pf[bg.pair_index], self.store)
        return run_iterations(bg.batch, nodes, pairs, self.store, self.cfg.t_iter)

    def world_boxes_t(self, pred: ObjectPrediction, caches: list[SceneCache]):
        """Differentiable world ``(yaw, centroid, size)`` of the independent predictions."""
        specs = self.specs
        n = len(pred)
        rows = np.arange(n)

        def pick(logits, res, spec):
            b = np.argmax(logits.data, axis=-1)
            return spec.centers[b] + res[rows, b] * spec.half_width

        d = pick(pred.d_logits, pred.d_res, specs.depth)
        logs = dc.stack(
            [pick(pred.s_logits[:, a, :], pred.s_res[:, a, :], specs.logsize) for a in range(3)],
            axis=1,
        )
        theta = pick(pred.theta_logits, pred.theta_res, specs.theta)
        c2d = _cat([c.c2d for c in caches], 2)
        kinv = _cat([c.kinv for c in caches])
        rot = _cat([c.rot for c in caches])
        cx = pred.delta[:, 0] + c2d[:, 0]
        cy = pred.delta[:, 1] + c2d[:, 1]
        ray = [cx * kinv[:, k, 0] + cy * kinv[:, k, 1] + kinv[:, k, 2] for k in range(3)]
        scale = dc.tabs(d) / dc.sqrt(ray[0] * ray[0] + ray[1] * ray[1] + ray[2] * ray[2])
        u = [r * scale for r in ray]
        cen = dc.stack([u[0] * rot[:, 0, m] + u[1] * rot[:, 1, m] + u[2] * rot[:, 2, m] for m in range(3)], axis=1)
        ct, st = dc.cos(theta), dc.sin(theta)
        yaw = dc.atan2(rot[:, 1, 0] * ct + rot[:, 1, 1] * st, rot[:, 0, 0] * ct + rot[:, 0, 1] * st)
        return yaw, cen, dc.exp(logs)

    def forward(self, caches: list[SceneCache], forced=None) -> ForwardResult:
        cfg = self.cfg
        bg = self.build_graph(caches, forced)
        nodes, messages = self.encode(caches, bg)
        pred = object_decode(nodes, self.store, self.specs)
        gt = {
            "distance": _cat([c.distance for c in caches]),
            "size": _cat([c.size for c in caches], 3),
            "yaw_cam": _cat([c.yaw_cam for c in caches]),
            "delta": _cat([c.delta for c in caches], 2),
        }
        ind, n_clamped = individual_loss(pred, gt, self.specs, cfg.lambda_reg)
        yaw, cen, size = self.world_boxes_t(pred, caches)
        corners = box_corners_t(yaw, cen, size)
        phys = physical_violation_t(corners, bg.groups, cfg.violation_mode)
        zero = dc.Tensor(0.0)
        direct = holistic = corner = zero
        rel = None
        batch = bg.batch
        if cfg.relative_losses:
            gt_corners = _cat([c.gt_corners for c in caches])
            if batch.n_edges:
                rel = relative_decode(messages, nodes[batch.src], nodes[batch.tgt], self.store)
                gt_rel = _cat([c.gt_rel for c in caches], 7)[bg.pair_index]
                direct = direct_relative_loss(rel, gt_rel[:, 0:3], gt_rel[:, 3:6], gt_rel[:, 6])
                gt_yaw = _cat([c.gt_yaw for c in caches])
                gt_c = _cat([c.gt_centroid for c in caches], 3)
                gt_s = _cat([c.gt_size for c in caches], 3)
                s, t = batch.src, batch.tgt
                if cfg.holistic_source == "ground_truth":
                    src_yaw, src_c, src_s = gt_yaw[s], gt_c[s], gt_s[s]
                else:
                    src_yaw, src_c, src_s = yaw.data[s], cen.data[s], size.data[s]
                c_yaw, c_cen, c_size = compose_yaw_params(
                    dc.Tensor(src_yaw),
                    dc.Tensor(src_c),
                    dc.Tensor(src_s),
                    rel.delta_theta,
                    rel.delta_c,
                    rel.delta_s_log,
                    cfg.compose_order,
                )
                weights = bg.rbar if cfg.holistic_weighting == "relatedness" else None
                holistic = holistic_loss(c_yaw, c_cen, c_size, gt_yaw[t], gt_c[t], gt_s[t], weights, t)
                corner = corner_loss(corners, box_corners_t(c_yaw, c_cen, c_size), gt_corners, gt_corners[t])
            else:
                corner = corner_loss(corners, dc.Tensor(np.zeros((0, 8, 3))), gt_corners, None)
        parts = {"individual": ind, "direct": direct, "holistic": holistic, "corner": corner, "physical": phys}
        total = combine(ind, direct, holistic, corner, phys, cfg.loss_weights)
        return ForwardResult(parts, total, n_clamped, bg, pred, rel)

    # -- inference

    def predict(self, scenes: list[SceneSample]) -> list["ScenePrediction"]:
        caches = [self.cache(s) for s in scenes]
        bg = self.build_graph(caches)
        nodes, messages = self.encode(caches, bg)
        pred = object_decode(nodes, self.store, self.specs)
        params = decode_params(pred, self.specs)
        conf = confidences(pred)
        rel = None
        if self.cfg.fusion and bg.batch.n_edges:
            rel = relative_decode(messages, nodes[bg.batch.src], nodes[bg.batch.tgt], self.store)
        out = []
        for s, (scene, c) in enumerate(zip(scenes, caches)):
            off = bg.offsets[s]
            indep = []
            for k, obj in enumerate(scene.objects):
                indep.append(camera_to_world(params[off + k], (obj.box2d.x, obj.box2d.y), scene.intrinsics, scene.pose))
            fused = indep
            if rel is not None:
                relatives = {}
                for e in np.flatnonzero(bg.groups[bg.batch.tgt] == s):
                    relatives[(int(bg.batch.src[e] - off), int(bg.batch.tgt[e] - off))] = rel.row(e)
                if relatives:
                    fused = holistic_fuse(
                        indep,
                        relatives,
                        bg.graphs[s],
                        self.cfg.fuse_alpha,
                        self.cfg.fuse_beta,
                        self.cfg.compose_order,
                        self.cfg.corner_mode,
                        self.cfg.fusion_first_term,
                    )
            out.append(ScenePrediction(scene.scene_id, indep, fused, conf[off : off + c.n], bg.graphs[s]))
        return out

    # -- checkpoints

    def save(self, path, optimizer=None, meta=None):
        doc = {"config": self.cfg.to_text(), "config_hash": self.cfg.config_hash()}
        doc.update(meta or {})
        dc.save_checkpoint(path, self.store, optimizer, doc)

    @classmethod
    def load(cls, path, cfg: RunConfig | None = None):
        from .config import load_config, parse_pairs

        ck = dc.load_checkpoint(path)
        if cfg is None:
            cfg = load_config(overrides=parse_pairs(ck["meta"]["config"].splitlines()))
        model = cls(cfg)
        model.store.load_state_dict(ck["params"])
        return model, ck


@dataclass
class ScenePrediction:
    scene_id: int
    independent: list
    fused: list
    confidence: np.ndarray
    graph: SparseSceneGraph


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    model: RelationalDetector
    history: list = field(default_factory=list)  # rows matching LOG_COLUMNS
    last_epoch: int = 0

    def log_text(self) -> str:
        return format_loss_log(self.history)


def format_loss_log(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in rows:
        w.writerow([r[0]] + [f"{v:.10g}" for v in r[1:-1]] + [r[-1]])
    return buf.getvalue()


def check_finite(parts: dict, epoch: int, step: int):
    for name in LOSS_COLUMNS[:5]:
        v = float(parts[name].data)
        if not math.isfinite(v):
            raise NonFiniteLossError(f"non-finite {name} loss ({v}) at epoch {epoch}, step {step}")


def train(
    cfg: RunConfig,
    dataset: Dataset,
    checkpoint=None,
    log_path=None,
    resume=None,
    epochs: int | None = None,
    scenes: list | None = None,
) -> TrainResult:
    """Train on ``dataset.train`` (or ``scenes``).

    Epoch ``e`` shuffles with seed ``(seed, e)``, so a resumed run replays
    exactly the batches an uninterrupted run would have seen.
    """
    model = RelationalDetector(cfg)
    opt = dc.Adam(model.store, lr=cfg.lr)
    history, start = [], 1
    if resume is not None:
        ck = dc.load_checkpoint(resume)
        model.store.load_state_dict(ck["params"])
        if ck["adam"] is not None:
            opt.load_state_dict(ck["adam"])
        start = int(ck["meta"].get("epoch", 0)) + 1
        history = [tuple(r) for r in ck["meta"].get("history", [])]
    train_scenes = scenes if scenes is not None else dataset.train
    if not train_scenes:
        raise TrainingError("no training scenes")
    caches = [model.cache(s) for s in train_scenes]
    # ``epochs`` counts the epochs of this call; by default run up to cfg.epochs in total
    end = cfg.epochs if epochs is None else start + epochs - 1
    for epoch in range(start, end + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(caches))
        sums = np.zeros(6)
        clamped = 0
        for step, b in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[b : b + cfg.batch_size]
            res = model.forward([caches[i] for i in idx])
            check_finite(res.parts, epoch, step)
            model.store.zero_grad()
            dc.backward(res.total)
            opt.step()
            vals = [float(res.parts[k].data) for k in LOSS_COLUMNS[:5]] + [float(res.total.data)]
            sums += np.array(vals) * len(idx)
            clamped += res.n_clamped
        row = (epoch,) + tuple(float(v) for v in sums / len(order)) + (clamped,)
        history.append(row)
        log.info("epoch %d total %.4f", epoch, row[6])
        if log_path is not None:
            Path(log_path).write_text(format_loss_log(history))
    last = history[-1][0] if history else start - 1
    if checkpoint is not None:
        model.save(checkpoint, opt, {"epoch": last, "seed": cfg.seed, "history": [list(r) for r in history]})
    return TrainResult(model, history, last)


# ---------------------------------------------------------------- evaluation


def oracle_predictions(scenes: list[SceneSample]) -> list[ScenePrediction]:
    """Ground-truth camera parameters pushed through the world conversion."""
    out = []
    for s in scenes:
        boxes = [camera_to_world(o.camera_params, (o.box2d.x, o.box2d.y), s.intrinsics, s.pose) for o in s.objects]
        out.append(ScenePrediction(s.scene_id, boxes, boxes, np.ones(len(boxes)), SparseSceneGraph(len(boxes), [])))
    return out


def score_predictions(preds: list[ScenePrediction], scenes: list[SceneSample], cfg: RunConfig, header=None) -> dict:
    dets, gts, fused, indep, gt_boxes = [], [], [], [], []
    for p, s in zip(preds, scenes):
        for k, o in enumerate(s.objects):
            dets.append(Detection(s.scene_id, o.class_id, float(p.confidence[k]), p.fused[k]))
            gts.append(GroundTruth(s.scene_id, o.class_id, o.box3d))
            fused.append(p.fused[k])
            indep.append(p.independent[k])
            gt_boxes.append(o.box3d)
    ap = average_precision(dets, gts, cfg.iou_threshold)
    return {
        "header": dict(header or {}),
        "iou_threshold": cfg.iou_threshold,
        "ap": ap.to_dict(),
        "pose": pose_errors(fused, gt_boxes, cfg.scale_mode).to_dict(),
        "pose_independent": pose_errors(indep, gt_boxes, cfg.scale_mode).to_dict(),
        "n_scenes": len(scenes),
        "n_objects": len(gts),
    }


def evaluate(model: RelationalDetector | None, scenes: list[SceneSample], cfg: RunConfig, header=None, batch=64) -> dict:
    """Metric summary for ``scenes``; ``model=None`` evaluates the ground-truth oracle."""
    if model is None:
        preds = oracle_predictions(scenes)
    else:
        preds = []
        for b in range(0, len(scenes), batch):
            preds += model.predict(scenes[b : b + batch])
    head = {"config_hash": cfg.config_hash(), "seed": cfg.seed}
    head.update(header or {})
    return score_predictions(preds, scenes, cfg, head)


def report_text(summary: dict) -> str:
    return format_report(summary, CLASS_NAMES)


# ---------------------------------------------------------------- ablation


def run_ablation(
    cfg: RunConfig,
    dataset: Dataset,
    names=("C0", "C1", "C2", "Full"),
    checkpoints: dict | None = None,
    train_missing: bool = True,
    out_dir=None,
) -> tuple[str, dict]:
    """Train (or load) each configuration and tabulate held-out metrics."""
    rows, summaries = [], {}
    for name in names:
        sub = ablation_config(cfg, name)
        path = (checkpoints or {}).get(name)
        if path is not None and Path(path).exists():
            model, _ = RelationalDetector.load(path, sub)
        elif train_missing:
            target = None if out_dir is None else Path(out_dir) / f"{name}.ckpt.json"
            model = train(sub, dataset, checkpoint=target).model
        else:
            raise TrainingError(f"missing checkpoint for {name}: {path}")
        summary = evaluate(model, dataset.test, sub, {"ablation": name})
        summaries[name] = summary
        rows.append(summary_row(name, summary))
    return format_table(rows), summaries


def summary_row(name, summary) -> list:
    from .evaluation import APResult, MetricStats, PoseErrorStats

    ap = APResult({}, summary["ap"]["mAP"])
    p = summary["pose"]
    stats = PoseErrorStats(
        MetricStats(**p["translation"]), MetricStats(**p["rotation"]), MetricStats(**p["scale"]), p["count"]
    )
    return ablation_row(name, ap, stats)
