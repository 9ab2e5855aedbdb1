"""Training losses: individual, direct relative, holistic, corner, physical.

All batched losses take :mod:`diffcore` tensors for predictions and plain
arrays for ground truth.  Norms are Euclidean; per-edge and per-object terms
are averaged (the corner loss takes the Frobenius norm of each ``(8, 3)``
corner difference).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import diffcore as dc
from .decode import BinSpec, DecoderSpecs, ObjectPrediction, RelativeOutput
from .geometry import CORNER_SIGNS, Box3D, box_corners

VIOLATION_MODES = ("overlap", "literal")


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.75
    lambda2: float = 0.6
    lambda3: float = 0.8
    lambda_reg: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be >= 0")


@dataclass(frozen=True)
class LossReport:
    individual: float
    direct: float
    holistic: float
    corner: float
    physical: float
    total: float

    def row(self) -> list[float]:
        return [self.individual, self.direct, self.holistic, self.corner, self.physical, self.total]


LOSS_COLUMNS = ("individual", "direct", "holistic", "corner", "physical", "total")


def combine(individual, direct, holistic, corner, physical, w: LossWeights):
    """Weighted total; works on floats and tensors alike."""
    return individual + w.lambda1 * (direct + holistic) + w.lambda2 * corner + w.lambda3 * physical


def total_loss(parts, w: LossWeights = LossWeights()) -> LossReport:
    """Build a :class:`LossReport` from the five loss values (mapping or sequence)."""
    if isinstance(parts, dict):
        parts = [parts[k] for k in LOSS_COLUMNS[:5]]
    vals = [float(p.data) if isinstance(p, dc.Tensor) else float(p) for p in parts]
    return LossReport(*vals, combine(*vals, w))


def cls_reg_loss(logits, residuals, gt_value, spec: BinSpec, lambda_reg: float = 1.0):
    """Cross-entropy over bins plus squared residual error at the ground-truth bin.

    Accepts one object (1-D logits) or a batch (rows).  Returns
    ``(loss, n_clamped)`` where ``loss`` has one entry per object and
    ``n_clamped`` counts ground-truth values outside the bin range.
    """
    logits, residuals = dc.as_tensor(logits), dc.as_tensor(residuals)
    single = logits.data.ndim == 1
    if single:
        logits = dc.reshape(logits, (1, -1))
        residuals = dc.reshape(residuals, (1, -1))
    gt = np.atleast_1d(np.asarray(gt_value, dtype=np.float64))
    n_clamped = int(np.sum((gt < spec.lo) | (gt >= spec.hi)))
    b, res = spec.value_to_bin(gt)
    b, res = np.atleast_1d(b), np.atleast_1d(res)
    rows = np.arange(len(b))
    err = residuals[rows, b] - res
    loss = dc.softmax_cross_entropy(logits, b) + lambda_reg * err * err
    return (loss[0] if single else loss), n_clamped


def individual_loss(pred: ObjectPrediction, gt, specs: DecoderSpecs = DecoderSpecs(), lambda_reg: float = 1.0):
    """Mean over objects of depth, per-axis size, yaw bin losses and offset L2.

    ``gt`` is a mapping with arrays ``distance`` (n,), ``size`` (n, 3),
    ``yaw_cam`` (n,) and ``delta`` (n, 2).
    """
    ld, c1 = cls_reg_loss(pred.d_logits, pred.d_res, gt["distance"], specs.depth, lambda_reg)
    lt, c2 = cls_reg_loss(pred.theta_logits, pred.theta_res, gt["yaw_cam"], specs.theta, lambda_reg)
    logs = np.log(np.asarray(gt["size"]))
    ls, clamped = 0.0, c1 + c2
    for a in range(3):
        la, ca = cls_reg_loss(pred.s_logits[:, a, :], pred.s_res[:, a, :], logs[:, a], specs.logsize, lambda_reg)
        ls = ls + la
        clamped += ca
    ldelta = dc.norm(pred.delta - np.asarray(gt["delta"]), axis=-1)
    return (ld + ls + lt + ldelta).mean(), clamped


def direct_relative_loss(pred: RelativeOutput, gt_c, gt_s_log, gt_theta):
    """Mean over edges of L2 errors in centroid, log-scale and wrapped yaw."""
    if pred.delta_c.shape[0] == 0:
        return dc.Tensor(0.0)
    lc = dc.norm(pred.delta_c - np.asarray(gt_c), axis=-1)
    ls = dc.norm(pred.delta_s_log - np.asarray(gt_s_log), axis=-1)
    lt = dc.tabs(dc.wrap(pred.delta_theta - np.asarray(gt_theta)))
    return (lc + ls + lt).mean()


def holistic_loss(yaw, centroid, size, gt_yaw, gt_centroid, gt_size, weights=None, targets=None):
    """Error of neighbor-composed estimates against the target's ground truth.

    Per edge: ``||[wrap(yaw - yaw*), C - C*]|| + ||S - S*||``.  Without
    ``weights`` the edge errors are averaged; with per-edge ``weights``
    (normalized relatedness, summing to 1 per target) they are summed with
    those weights and averaged over the distinct ``targets``.
    """
    if yaw.shape[0] == 0:
        return dc.Tensor(0.0)
    dyaw = dc.reshape(dc.wrap(yaw - np.asarray(gt_yaw)), (-1, 1))
    pose_err = dc.norm(dc.concat([dyaw, centroid - np.asarray(gt_centroid)], axis=-1), axis=-1)
    per_edge = pose_err + dc.norm(size - np.asarray(gt_size), axis=-1)
    if weights is None:
        return per_edge.mean()
    n_targets = len(np.unique(targets))
    return (per_edge * weights).sum() * (1.0 / n_targets)


def corner_loss(pred_corners, composed_corners, gt_corners, gt_composed_corners):
    """Independent and composed corner errors, kept as two separate terms."""
    term_a = dc.norm(dc.reshape(pred_corners - np.asarray(gt_corners), (pred_corners.shape[0], -1)), axis=-1).mean()
    if composed_corners.shape[0] == 0:
        return term_a
    diff_b = composed_corners - np.asarray(gt_composed_corners)
    term_b = dc.norm(dc.reshape(diff_b, (composed_corners.shape[0], -1)), axis=-1).mean()
    return term_a + term_b


def box_corners_t(yaw, centroid, size):
    """Differentiable ``(n, 8, 3)`` corners matching :func:`geometry.box_corners`."""
    half = dc.reshape(size * 0.5, (-1, 1, 3)) * CORNER_SIGNS[None]
    c = dc.reshape(dc.cos(yaw), (-1, 1))
    s = dc.reshape(dc.sin(yaw), (-1, 1))
    lx, ly, lz = half[:, :, 0], half[:, :, 1], half[:, :, 2]
    rotated = dc.stack([c * lx - s * ly, s * lx + c * ly, lz], axis=2)
    return rotated + dc.reshape(centroid, (-1, 1, 3))


def _pair_index(groups):
    groups = np.asarray(groups)
    ii, jj = [], []
    for g in np.unique(groups):
        idx = np.flatnonzero(groups == g)
        for a in range(len(idx)):
            for b in range(a + 1, len(idx)):
                ii.append(idx[a])
                jj.append(idx[b])
    return np.array(ii, dtype=np.int64), np.array(jj, dtype=np.int64)


def physical_violation_t(corners, groups=None, mode: str = "overlap"):
    """Collision penalty between boxes of the same scene, averaged over scenes.

    ``overlap`` sums, over unordered pairs, the volume of the intersection of
    the boxes' world axis-aligned extents.  ``literal`` sums
    ``relu(max_j - max_i) + relu(min_j - min_i)`` over ordered pairs and axes.
    """
    n = corners.shape[0]
    if groups is None:
        groups = np.zeros(n, dtype=np.int64)
    n_groups = len(np.unique(groups)) if n else 1
    hi, lo = dc.amax(corners, axis=1), dc.amin(corners, axis=1)
    if mode == "overlap":
        i, j = _pair_index(groups)
        if len(i) == 0:
            return dc.Tensor(0.0)
        upper = dc.concat([dc.reshape(hi[i], (-1, 3, 1)), dc.reshape(hi[j], (-1, 3, 1))], axis=2)
        lower = dc.concat([dc.reshape(lo[i], (-1, 3, 1)), dc.reshape(lo[j], (-1, 3, 1))], axis=2)
        ext = dc.relu(dc.amin(upper, axis=2) - dc.amax(lower, axis=2))
        vol = ext[:, 0] * ext[:, 1] * ext[:, 2]
        return vol.sum() * (1.0 / n_groups)
    if mode == "literal":
        groups = np.asarray(groups)
        i, j = np.nonzero(groups[:, None] == groups[None, :])
        terms = dc.relu(hi[j] - hi[i]) + dc.relu(lo[j] - lo[i])
        return terms.sum() * (1.0 / n_groups)
    raise ValueError(f"unknown violation mode {mode!r}")


def physical_violation_loss(boxes: list[Box3D], mode: str = "overlap") -> float:
    if not boxes:
        return 0.0
    corners = dc.Tensor(np.stack([box_corners(b) for b in boxes]))
    return float(physical_violation_t(corners, None, mode).data)
