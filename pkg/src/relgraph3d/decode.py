"""Object decoder, relative decoder and holistic fusion.

The object decoder predicts camera-space parameters with a bin/residual
parameterization.  The relative decoder regresses a yaw-frame transform per
retained edge ``i -> j``.  Fusion merges each target's independent estimate
with the candidates obtained by chaining neighbor frames with the predicted
relative transforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .geometry import (
    Box3D,
    CameraSpaceParams,
    compose_relative,
    corner_frame,
    extract_pose,
    extract_scale,
    half_extent,
    pose_frame,
    rotz,
    wrap_angle,
)
from .relatedness import SparseSceneGraph

DELTA_SCALE = 10.0  # pixels per unit of the offset head


@dataclass(frozen=True)
class BinSpec:
    n_bins: int
    lo: float
    hi: float

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.n_bins

    @property
    def half_width(self) -> float:
        return self.width / 2.0

    @property
    def centers(self) -> np.ndarray:
        return self.lo + (np.arange(self.n_bins) + 0.5) * self.width

    def clamp(self, v):
        return np.clip(v, self.lo, np.nextafter(self.hi, self.lo))

    def value_to_bin(self, v):
        """Bin index and residual in half-bin units (``[-1, 1)``)."""
        v = self.clamp(np.asarray(v, dtype=np.float64))
        b = np.clip(np.floor((v - self.lo) / self.width).astype(np.int64), 0, self.n_bins - 1)
        res = (v - self.centers[b]) / self.half_width
        if np.ndim(v) == 0:
            return int(b), float(res)
        return b, res

    def bin_to_value(self, logits, residuals) -> float:
        b = int(np.argmax(logits))
        return float(self.centers[b] + residuals[b] * self.half_width)


THETA_BINS = BinSpec(12, -np.pi, np.pi)
DEPTH_BINS = BinSpec(8, 0.3, 6.3)
LOGSIZE_BINS = BinSpec(6, float(np.log(0.1)), float(np.log(3.0)))


@dataclass(frozen=True)
class DecoderSpecs:
    theta: BinSpec = THETA_BINS
    depth: BinSpec = DEPTH_BINS
    logsize: BinSpec = LOGSIZE_BINS


@dataclass
class ObjectPrediction:
    delta: dc.Tensor  # (n, 2) pixels
    d_logits: dc.Tensor  # (n, depth bins)
    d_res: dc.Tensor
    s_logits: dc.Tensor  # (n, 3, logsize bins)
    s_res: dc.Tensor
    theta_logits: dc.Tensor  # (n, theta bins)
    theta_res: dc.Tensor

    def __len__(self):
        return self.delta.shape[0]


@dataclass(frozen=True, eq=False)
class RelativePrediction:
    delta_c: np.ndarray
    delta_s_log: np.ndarray
    delta_theta: float

    def __post_init__(self):
        object.__setattr__(self, "delta_c", np.asarray(self.delta_c, dtype=np.float64).reshape(3))
        object.__setattr__(self, "delta_s_log", np.asarray(self.delta_s_log, dtype=np.float64).reshape(3))
        object.__setattr__(self, "delta_theta", wrap_angle(float(self.delta_theta)))


@dataclass
class RelativeOutput:
    """Batched relative-decoder output (one row per edge)."""

    delta_c: dc.Tensor  # (e, 3)
    delta_s_log: dc.Tensor  # (e, 3)
    delta_theta: dc.Tensor  # (e,)

    def row(self, e: int) -> RelativePrediction:
        return RelativePrediction(self.delta_c.data[e], self.delta_s_log.data[e], self.delta_theta.data[e])


def add_object_decoder(store: dc.ParamStore, d_model, specs: DecoderSpecs, rng, prefix="dec_obj"):
    store.add_linear(f"{prefix}.delta", d_model, 2, rng)
    store.add_linear(f"{prefix}.d_cls", d_model, specs.depth.n_bins, rng)
    store.add_linear(f"{prefix}.d_res", d_model, specs.depth.n_bins, rng)
    store.add_linear(f"{prefix}.s_cls", d_model, 3 * specs.logsize.n_bins, rng)
    store.add_linear(f"{prefix}.s_res", d_model, 3 * specs.logsize.n_bins, rng)
    store.add_linear(f"{prefix}.t_cls", d_model, specs.theta.n_bins, rng)
    store.add_linear(f"{prefix}.t_res", d_model, specs.theta.n_bins, rng)


def add_relative_decoder(store: dc.ParamStore, d_model, rng, prefix="dec_rel"):
    store.add_linear(f"{prefix}.l0", 3 * d_model, d_model, rng)
    store.add_linear(f"{prefix}.l1", d_model, 7, rng)


def _head(x, store, name):
    return dc.linear(x, store[f"{name}.w"], store[f"{name}.b"])


def object_decode(o, store: dc.ParamStore, specs: DecoderSpecs = DecoderSpecs(), prefix="dec_obj") -> ObjectPrediction:
    """Raw logits and residuals for every node embedding row of ``o``."""
    n = o.shape[0]
    nb = specs.logsize.n_bins
    return ObjectPrediction(
        delta=_head(o, store, f"{prefix}.delta") * DELTA_SCALE,
        d_logits=_head(o, store, f"{prefix}.d_cls"),
        d_res=_head(o, store, f"{prefix}.d_res"),
        s_logits=dc.reshape(_head(o, store, f"{prefix}.s_cls"), (n, 3, nb)),
        s_res=dc.reshape(_head(o, store, f"{prefix}.s_res"), (n, 3, nb)),
        theta_logits=_head(o, store, f"{prefix}.t_cls"),
        theta_res=_head(o, store, f"{prefix}.t_res"),
    )


def decode_params(pred: ObjectPrediction, specs: DecoderSpecs = DecoderSpecs()) -> list[CameraSpaceParams]:
    out = []
    for n in range(len(pred)):
        d = specs.depth.bin_to_value(pred.d_logits.data[n], pred.d_res.data[n])
        logs = [specs.logsize.bin_to_value(pred.s_logits.data[n, a], pred.s_res.data[n, a]) for a in range(3)]
        theta = specs.theta.bin_to_value(pred.theta_logits.data[n], pred.theta_res.data[n])
        out.append(CameraSpaceParams(pred.delta.data[n], max(d, 1e-3), np.exp(logs), theta))
    return out


def confidences(pred: ObjectPrediction) -> np.ndarray:
    """Detection confidence: max softmax probability of the depth-bin head."""
    return dc.softmax(pred.d_logits.data, axis=-1).max(axis=-1)


def relative_decode(m, o_src, o_tgt, store: dc.ParamStore, prefix="dec_rel") -> RelativeOutput:
    x = dc.concat([m, o_src, o_tgt], axis=-1)
    h = dc.relu(_head(x, store, f"{prefix}.l0"))
    out = _head(h, store, f"{prefix}.l1")
    return RelativeOutput(out[:, 0:3], out[:, 3:6], dc.wrap(out[:, 6]))


# ---------------------------------------------------------------- relative transforms


def relative_from_gt(box_i: Box3D, box_j: Box3D, order: str = "relative_first") -> RelativePrediction:
    """Ground-truth transform from ``box_i`` to ``box_j``.

    The yaw and centroid parts are chosen so chaining the relative frame with
    the frame of ``box_i`` in the configured order gives back ``box_j``.
    """
    dtheta = wrap_angle(box_j.yaw - box_i.yaw)
    if order == "relative_first":
        dcen = box_j.centroid - rotz(dtheta) @ box_i.centroid
    elif order == "world_first":
        dcen = rotz(box_i.yaw).T @ (box_j.centroid - box_i.centroid)
    else:
        raise ValueError(f"unknown compose order {order!r}")
    return RelativePrediction(dcen, np.log(box_j.size) - np.log(box_i.size), dtheta)


def relative_frame(rel: RelativePrediction) -> np.ndarray:
    return pose_frame(rel.delta_theta, rel.delta_c)


def relative_corner_frame(rel: RelativePrediction, box_i: Box3D, order="relative_first", mode="literal") -> np.ndarray:
    """Relative corner frame whose composition recovers the predicted scale.

    The additive half-extent term is derived from ``box_i`` and the predicted
    log-scale ratio so that extracting the scale from the chained corner and
    pose frames yields ``size_i * exp(delta_s_log)``.
    """
    yaw_hat = wrap_angle(box_i.yaw + rel.delta_theta)
    s_hat = box_i.size * np.exp(rel.delta_s_log)
    h_hat = half_extent(yaw_hat, s_hat, mode)
    h_i = half_extent(box_i.yaw, box_i.size, mode)
    if order == "relative_first":
        ds_lin = 2.0 * (h_hat - rotz(rel.delta_theta) @ h_i)
    else:
        ds_lin = 2.0 * rotz(box_i.yaw).T @ (h_hat - h_i)
    b = relative_frame(rel)
    b[:3, 3] += ds_lin / 2.0
    return b


def candidate_box(rel: RelativePrediction, box_i: Box3D, order="relative_first", mode="literal") -> Box3D:
    """Estimate of the target box from neighbor ``box_i`` and a relative transform."""
    t_hat = compose_relative(relative_frame(rel), pose_frame(box_i.yaw, box_i.centroid), order)
    b_hat = compose_relative(
        relative_corner_frame(rel, box_i, order, mode),
        corner_frame(box_i.yaw, box_i.centroid, box_i.size, mode),
        order,
    )
    yaw, cen = extract_pose(t_hat)
    return Box3D(cen, extract_scale(b_hat, t_hat, mode), yaw)


def compose_yaw_params(theta_i, c_i, s_i, dtheta, dcen, ds_log, order="relative_first"):
    """Differentiable closed form of :func:`candidate_box` for batches of edges.

    All inputs are tensors with one row per edge; returns ``(yaw, centroid,
    size)`` tensors.
    """
    cos_d, sin_d = dc.cos(dtheta), dc.sin(dtheta)
    yaw = dc.wrap(theta_i + dtheta)
    if order == "relative_first":
        cx, cy = c_i[:, 0], c_i[:, 1]
        rx = cos_d * cx - sin_d * cy
        ry = sin_d * cx + cos_d * cy
        cen = dc.stack([rx, ry, c_i[:, 2]], axis=1) + dcen
    else:
        cos_i, sin_i = dc.cos(theta_i), dc.sin(theta_i)
        dx, dy = dcen[:, 0], dcen[:, 1]
        rx = cos_i * dx - sin_i * dy
        ry = sin_i * dx + cos_i * dy
        cen = dc.stack([rx, ry, dcen[:, 2]], axis=1) + c_i
    size = s_i * dc.exp(ds_log)
    return yaw, cen, size


# ---------------------------------------------------------------- fusion


def holistic_fuse(
    indep: list[Box3D],
    relatives: dict,
    graph: SparseSceneGraph,
    alpha: float = 0.6,
    beta: float = 0.4,
    order: str = "relative_first",
    mode: str = "literal",
    first_term: str = "independent",
) -> list[Box3D]:
    """Weighted fusion of independent and neighbor-composed estimates.

    ``relatives`` maps an edge ``(i, j)`` to its :class:`RelativePrediction`.
    Yaw is fused as a circular weighted mean; centroid and scale linearly.
    Nodes without incoming edges keep their independent estimate.
    With ``first_term="composed"`` the alpha-weighted term is the
    relatedness-weighted mean of the composed candidates instead of the
    independent estimate.
    """
    if abs(alpha + beta - 1.0) > 1e-12:
        raise ValueError(f"fusion weights must sum to 1, got {alpha} + {beta}")
    out = list(indep)
    for j in range(graph.n_nodes):
        incoming = graph.incoming(j)
        if not incoming:
            continue
        cands = [candidate_box(relatives[(i, j)], indep[i], order, mode) for i, _, _ in incoming]
        w = np.array([r for _, _, r in incoming])
        rel_sin = sum(wk * np.sin(c.yaw) for wk, c in zip(w, cands))
        rel_cos = sum(wk * np.cos(c.yaw) for wk, c in zip(w, cands))
        rel_c = sum(wk * c.centroid for wk, c in zip(w, cands))
        rel_s = sum(wk * c.size for wk, c in zip(w, cands))
        if first_term == "independent":
            own = indep[j]
            own_sin, own_cos, own_c, own_s = np.sin(own.yaw), np.cos(own.yaw), own.centroid, own.size
        elif first_term == "composed":
            own_sin, own_cos, own_c, own_s = rel_sin, rel_cos, rel_c, rel_s
        else:
            raise ValueError(f"unknown first_term {first_term!r}")
        if beta == 0.0:
            out[j] = indep[j] if first_term == "independent" else Box3D(own_c, own_s, np.arctan2(own_sin, own_cos))
            continue
        yaw = np.arctan2(alpha * own_sin + beta * rel_sin, alpha * own_cos + beta * rel_cos)
        out[j] = Box3D(alpha * own_c + beta * rel_c, alpha * own_s + beta * rel_s, yaw)
    return out
