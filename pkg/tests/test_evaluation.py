import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relgraph3d.evaluation import (
    ABLATION_COLUMNS,
    APResult,
    Detection,
    EvaluationError,
    GroundTruth,
    ablation_row,
    ap_from_pr,
    average_precision,
    format_report,
    format_table,
    match_detections,
    per_object_errors,
    pose_errors,
    scale_error,
)
from relgraph3d.geometry import Box3D, iou3d, wrap_angle


def box_at(x, y=0.0, yaw=0.0, size=(1.0, 1.0, 1.0)):
    return Box3D((x, y, 0.0), size, yaw)


def brute_ap(tp, n_gt):
    """Area under the precision envelope, one recall step per true positive."""
    tp = list(tp)
    prec = [sum(tp[: k + 1]) / (k + 1) for k in range(len(tp))]
    return sum(max(prec[k:]) for k in range(len(tp)) if tp[k]) / n_gt


# -- pose errors


def test_pose_errors_perfect():
    boxes = [box_at(i * 3) for i in range(4)]
    s = pose_errors(boxes, boxes)
    for m in (s.translation, s.rotation, s.scale):
        assert m.median == 0.0 and m.mean == 0.0 and m.frac_under == 1.0
    assert s.count == 4


def test_pose_errors_single_offset():
    s = pose_errors([box_at(0.4)], [box_at(0.0)])
    assert s.translation.mean == pytest.approx(0.4)
    assert s.translation.frac_under == 1.0


def test_rotation_error_wraps():
    e = per_object_errors([box_at(0, yaw=math.pi - 0.1)], [box_at(0, yaw=-math.pi + 0.1)])
    assert e[0, 1] == pytest.approx(math.degrees(0.2))


def test_scale_modes():
    p, g = box_at(0, size=(2, 1, 1)), box_at(0)
    assert scale_error(p, g) == pytest.approx(1 / 3)
    assert scale_error(p, g, "volume") == pytest.approx(1.0)
    with pytest.raises(EvaluationError):
        scale_error(p, g, "nope")


def test_pose_errors_count_mismatch():
    with pytest.raises(EvaluationError):
        pose_errors([box_at(0)], [])


def _random_scene_boxes(rng, n):
    return [Box3D(rng.uniform(-4, 4, 3), rng.uniform(0.3, 2, 3), rng.uniform(-4, 4)) for _ in range(n)]


def test_pose_errors_brute_force_100_scenes():
    rng = np.random.default_rng(0)
    preds, gts = [], []
    for _ in range(100):
        n = int(rng.integers(3, 9))
        gts += _random_scene_boxes(rng, n)
        preds += _random_scene_boxes(rng, n)
    s = pose_errors(preds, gts)
    t = [math.dist(p.centroid, g.centroid) for p, g in zip(preds, gts)]
    r = [math.degrees(abs(math.remainder(p.yaw - g.yaw, 2 * math.pi))) for p, g in zip(preds, gts)]
    sc = [sum(abs(a / b - 1) for a, b in zip(p.size, g.size)) / 3 for p, g in zip(preds, gts)]
    for stats, vals, thr in ((s.translation, t, 0.5), (s.rotation, r, 30.0), (s.scale, sc, 0.2)):
        assert stats.mean == pytest.approx(sum(vals) / len(vals), rel=1e-12)
        assert stats.median == pytest.approx(float(np.median(vals)), rel=1e-12)
        assert stats.frac_under == sum(v <= thr for v in vals) / len(vals)


@given(st.permutations(list(range(6))))
def test_pose_errors_permutation_invariant(perm):
    rng = np.random.default_rng(1)
    preds, gts = _random_scene_boxes(rng, 6), _random_scene_boxes(rng, 6)
    a = pose_errors(preds, gts)
    b = pose_errors([preds[i] for i in perm], [gts[i] for i in perm])
    for m in ("translation", "rotation", "scale"):
        x, y = getattr(a, m), getattr(b, m)
        assert x.median == y.median and x.frac_under == y.frac_under
        assert x.mean == pytest.approx(y.mean, rel=1e-14)


# -- average precision


def _gts(n, cls=0, scene=0):
    return [GroundTruth(scene, cls, box_at(5.0 * i)) for i in range(n)]


def test_ap_all_perfect():
    gts = _gts(3, 0) + [GroundTruth(0, 2, box_at(30.0))]
    dets = [Detection(0, g.class_id, 0.5 + 0.1 * i, g.box) for i, g in enumerate(gts)]
    res = average_precision(dets, gts)
    assert res.per_class == {0: 1.0, 2: 1.0} and res.mAP == 1.0


def test_ap_all_miss():
    gts = _gts(3)
    dets = [Detection(0, 0, 0.9, box_at(100.0 + i * 5)) for i in range(3)]
    assert average_precision(dets, gts).mAP == 0.0
    assert average_precision([], gts).mAP == 0.0


def test_ap_three_object_hand_curve():
    gts = _gts(3)
    dets = [
        Detection(0, 0, 0.9, gts[0].box),
        Detection(0, 0, 0.8, box_at(100.0)),
        Detection(0, 0, 0.7, gts[2].box),
    ]
    # precision 1, 1/2, 2/3 at recall 1/3, 1/3, 2/3; envelope 1 and 2/3
    assert average_precision(dets, gts).mAP == pytest.approx(1 / 3 + (1 / 3) * (2 / 3), abs=1e-15)


def test_ap_threshold_boundary():
    g = box_at(0.0)
    # sliding a unit cube by t along x gives IoU (1 - t) / (1 + t); 0.15 at t = 0.85 / 1.15
    t = 0.85 / 1.15
    near = box_at(t - 1e-6)
    far = box_at(t + 1e-6)
    assert iou3d(near, g) >= 0.15 > iou3d(far, g)
    assert average_precision([Detection(0, 0, 1.0, near)], [GroundTruth(0, 0, g)]).mAP == 1.0
    assert average_precision([Detection(0, 0, 1.0, far)], [GroundTruth(0, 0, g)]).mAP == 0.0


def test_each_gt_matched_once():
    gts = _gts(1)
    dets = [Detection(0, 0, 0.9, gts[0].box), Detection(0, 0, 0.8, gts[0].box)]
    assert match_detections(dets, gts).tolist() == [1.0, 0.0]


def test_detections_only_match_same_scene():
    gts = [GroundTruth(1, 0, box_at(0.0))]
    assert match_detections([Detection(0, 0, 1.0, box_at(0.0))], gts).tolist() == [0.0]


def test_map_skips_classes_without_gt():
    gts = _gts(2, cls=1)
    dets = [Detection(0, 1, 0.9, g.box) for g in gts] + [Detection(0, 4, 0.9, box_at(0))]
    res = average_precision(dets, gts)
    assert list(res.per_class) == [1] and res.mAP == 1.0


@settings(max_examples=300)
@given(st.lists(st.booleans(), min_size=1, max_size=12), st.integers(0, 4))
def test_ap_matches_brute_force(tp, extra):
    n_gt = sum(tp) + extra
    if n_gt == 0:
        assert math.isnan(ap_from_pr(tp, n_gt))
        return
    assert ap_from_pr(tp, n_gt) == pytest.approx(brute_ap(tp, n_gt), abs=1e-12)


@settings(max_examples=300)
@given(st.lists(st.booleans(), max_size=12), st.integers(1, 4))
def test_ap_monotone_under_top_hit(tp, extra):
    n_gt = sum(tp) + extra
    assert ap_from_pr([True] + tp, n_gt) >= ap_from_pr(tp, n_gt) - 1e-12


def test_ap_bounds():
    rng = np.random.default_rng(2)
    for _ in range(200):
        tp = rng.random(10) < 0.5
        v = ap_from_pr(tp, int(tp.sum()) + 1)
        assert 0.0 <= v <= 1.0


# -- tables


def test_ablation_table_schema():
    s = pose_errors([box_at(0.1)], [box_at(0.0)])
    row = ablation_row("C0", APResult({0: 0.5}, 0.5), s)
    text = format_table([row, ablation_row("Full", APResult({0: 0.7}, 0.7), s)])
    lines = text.strip().split("\n")
    assert lines[0].split("\t") == list(ABLATION_COLUMNS)
    assert [ln.split("\t")[0] for ln in lines[1:]] == ["C0", "Full"]
    assert all(len(ln.split("\t")) == len(ABLATION_COLUMNS) for ln in lines)
    assert format_table([row]) == format_table([list(row)])
    with pytest.raises(EvaluationError):
        format_table([row[:-1]])


def test_format_report_contains_summary():
    s = pose_errors([box_at(0.1)], [box_at(0.0)])
    summary = {"header": {"seed": 3}, "ap": APResult({0: 1.0}, 1.0).to_dict(), "pose": s.to_dict()}
    text = format_report(summary, ["bed"])
    assert "# seed: 3" in text and "AP[bed]\t1.000000" in text
    assert text.rstrip().split("\n")[-1].startswith("summary {")


def test_wrap_consistency_with_geometry():
    for d in np.linspace(-10, 10, 101):
        assert abs(abs(wrap_angle(d)) - abs(math.remainder(d, 2 * math.pi))) < 1e-12
