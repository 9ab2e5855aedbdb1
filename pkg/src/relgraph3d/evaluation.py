"""Pose-error statistics, 3D detection AP and report tables."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import Box3D, iou3d, wrap_angle

IOU_THRESHOLD = 0.15
TRANSLATION_THRESHOLD = 0.5  # m
ROTATION_THRESHOLD = 30.0  # deg
SCALE_THRESHOLD = 0.2

ABLATION_COLUMNS = (
    "config",
    "mAP",
    "trans_median",
    "trans_mean",
    "trans_frac",
    "rot_median",
    "rot_mean",
    "rot_frac",
    "scale_median",
    "scale_mean",
    "scale_frac",
)


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class MetricStats:
    median: float
    mean: float
    frac_under: float

    @classmethod
    def of(cls, errors, threshold) -> "MetricStats":
        e = np.asarray(errors, dtype=np.float64)
        if e.size == 0:
            return cls(float("nan"), float("nan"), float("nan"))
        return cls(float(np.median(e)), float(np.mean(e)), float(np.mean(e <= threshold)))


@dataclass(frozen=True)
class PoseErrorStats:
    translation: MetricStats
    rotation: MetricStats
    scale: MetricStats
    count: int

    def to_dict(self) -> dict:
        return asdict(self)


def scale_error(pred: Box3D, gt: Box3D, mode: str = "axis") -> float:
    """``axis``: mean per-axis ``|s/s* - 1|``; ``volume``: ``|V/V* - 1|``."""
    if mode == "axis":
        return float(np.mean(np.abs(pred.size / gt.size - 1.0)))
    if mode == "volume":
        return float(abs(pred.volume() / gt.volume() - 1.0))
    raise EvaluationError(f"unknown scale mode {mode!r}")


def per_object_errors(preds, gts, scale_mode="axis") -> np.ndarray:
    """``(n, 3)`` rows of translation (m), rotation (deg) and scale error."""
    if len(preds) != len(gts):
        raise EvaluationError(f"{len(preds)} predictions for {len(gts)} ground-truth objects")
    rows = [
        (
            float(np.linalg.norm(p.centroid - g.centroid)),
            float(np.degrees(abs(wrap_angle(p.yaw - g.yaw)))),
            scale_error(p, g, scale_mode),
        )
        for p, g in zip(preds, gts)
    ]
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def pose_errors(preds, gts, scale_mode: str = "axis") -> PoseErrorStats:
    """Statistics over matched prediction / ground-truth box lists."""
    e = per_object_errors(preds, gts, scale_mode)
    return PoseErrorStats(
        MetricStats.of(e[:, 0], TRANSLATION_THRESHOLD),
        MetricStats.of(e[:, 1], ROTATION_THRESHOLD),
        MetricStats.of(e[:, 2], SCALE_THRESHOLD),
        len(e),
    )


@dataclass(frozen=True)
class Detection:
    scene_id: int
    class_id: int
    confidence: float
    box: Box3D


@dataclass(frozen=True)
class GroundTruth:
    scene_id: int
    class_id: int
    box: Box3D


@dataclass(frozen=True)
class APResult:
    per_class: dict  # class id -> AP, only classes with ground truth
    mAP: float

    def to_dict(self) -> dict:
        return {"per_class": {str(k): v for k, v in self.per_class.items()}, "mAP": self.mAP}


def ap_from_pr(tp, n_gt) -> float:
    """All-point interpolated AP from a ranked true-positive indicator."""
    tp = np.asarray(tp, dtype=np.float64)
    if n_gt == 0:
        return float("nan")
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(tp) + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def match_detections(dets, gts, iou_thresh=IOU_THRESHOLD) -> np.ndarray:
    """True-positive flags for ``dets`` ranked by confidence (stable on ties).

    Each detection takes the unmatched same-scene ground truth with the
    highest IoU; it is a true positive if that IoU reaches the threshold.
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    by_scene = {}
    for g_idx, g in enumerate(gts):
        by_scene.setdefault(g.scene_id, []).append(g_idx)
    used = np.zeros(len(gts), dtype=bool)
    tp = np.zeros(len(dets))
    for rank, d_idx in enumerate(order):
        d = dets[d_idx]
        best, best_iou = -1, -1.0
        for g_idx in by_scene.get(d.scene_id, []):
            if used[g_idx]:
                continue
            v = iou3d(d.box, gts[g_idx].box)
            if v > best_iou:
                best, best_iou = g_idx, v
        if best >= 0 and best_iou >= iou_thresh:
            used[best] = True
            tp[rank] = 1.0
    return tp


def average_precision(dets, gts, iou_thresh: float = IOU_THRESHOLD) -> APResult:
    """Per-class AP and their unweighted mean over classes with ground truth."""
    classes = sorted({g.class_id for g in gts})
    per_class = {}
    for c in classes:
        cd = [d for d in dets if d.class_id == c]
        cg = [g for g in gts if g.class_id == c]
        per_class[c] = ap_from_pr(match_detections(cd, cg, iou_thresh), len(cg))
    m = float(np.mean(list(per_class.values()))) if per_class else float("nan")
    return APResult(per_class, m)


# ---------------------------------------------------------------- reports


def _fmt(v) -> str:
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def ablation_row(name, ap: APResult, stats: PoseErrorStats) -> list:
    return [
        name,
        ap.mAP,
        stats.translation.median,
        stats.translation.mean,
        stats.translation.frac_under,
        stats.rotation.median,
        stats.rotation.mean,
        stats.rotation.frac_under,
        stats.scale.median,
        stats.scale.mean,
        stats.scale.frac_under,
    ]


def format_table(rows, columns=ABLATION_COLUMNS, sep="\t") -> str:
    lines = [sep.join(columns)]
    for r in rows:
        if len(r) != len(columns):
            raise EvaluationError(f"row has {len(r)} fields, table has {len(columns)}")
        lines.append(sep.join(_fmt(v) for v in r))
    return "\n".join(lines) + "\n"


def format_report(summary: dict, class_names=None) -> str:
    """Human-readable metric report followed by the JSON summary record."""
    lines = []
    header = summary.get("header", {})
    for k in sorted(header):
        lines.append(f"# {k}: {header[k]}")
    ap = summary["ap"]
    lines.append(f"mAP@{summary.get('iou_threshold', IOU_THRESHOLD)}\t{_fmt(ap['mAP'])}")
    for c, v in sorted(ap["per_class"].items(), key=lambda kv: int(kv[0])):
        name = class_names[int(c)] if class_names else c
        lines.append(f"AP[{name}]\t{_fmt(v)}")
    for metric in ("translation", "rotation", "scale"):
        s = summary["pose"][metric]
        lines.append(f"{metric}\tmedian={_fmt(s['median'])}\tmean={_fmt(s['mean'])}\tfrac={_fmt(s['frac_under'])}")
    lines.append("summary " + json.dumps(summary, sort_keys=True))
    return "\n".join(lines) + "\n"
