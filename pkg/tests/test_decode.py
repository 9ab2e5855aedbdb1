import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relgraph3d import diffcore as dc
from relgraph3d.decode import (
    DEPTH_BINS,
    LOGSIZE_BINS,
    THETA_BINS,
    BinSpec,
    DecoderSpecs,
    RelativePrediction,
    add_object_decoder,
    add_relative_decoder,
    candidate_box,
    compose_yaw_params,
    confidences,
    decode_params,
    holistic_fuse,
    object_decode,
    relative_decode,
    relative_from_gt,
)
from relgraph3d.geometry import Box3D, wrap_angle
from relgraph3d.relatedness import SparseSceneGraph
from relgraph3d.verify import numeric_grad, rel_error

boxes = st.builds(
    Box3D,
    st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    st.lists(st.floats(0.1, 3), min_size=3, max_size=3),
    st.floats(-math.pi, math.pi),
)


# -- bins


def test_bin_centers_and_width():
    spec = BinSpec(4, 0.0, 8.0)
    assert spec.width == 2.0
    np.testing.assert_array_equal(spec.centers, [1, 3, 5, 7])


def test_bin_to_value_examples():
    spec = BinSpec(4, 0.0, 8.0)
    logits = np.eye(4)[0]
    assert spec.bin_to_value(logits, np.zeros(4)) == 1.0
    assert spec.bin_to_value(logits, np.ones(4)) == 2.0
    # ties go to the lower bin
    assert spec.bin_to_value(np.array([1.0, 3.0, 3.0, 0.0]), np.zeros(4)) == 3.0


@pytest.mark.parametrize("spec", [THETA_BINS, DEPTH_BINS, LOGSIZE_BINS])
def test_bin_round_trip(spec):
    rng = np.random.default_rng(0)
    for v in rng.uniform(spec.lo, spec.hi, 1000):
        b, res = spec.value_to_bin(v)
        assert -1.0 <= res < 1.0
        back = spec.bin_to_value(np.eye(spec.n_bins)[b], np.full(spec.n_bins, res))
        assert abs(back - v) < 1e-12


def test_value_to_bin_clamps():
    spec = BinSpec(4, 0.0, 8.0)
    assert spec.value_to_bin(-3.0)[0] == 0
    assert spec.value_to_bin(50.0)[0] == 3


# -- heads


def _store(d=6, seed=0):
    store = dc.ParamStore()
    rng = np.random.default_rng(seed)
    add_object_decoder(store, d, DecoderSpecs(), rng)
    add_relative_decoder(store, d, rng)
    return store


def test_object_decode_shapes_and_zero_logits():
    store = _store()
    pred = object_decode(dc.Tensor(np.zeros((3, 6))), store)
    assert pred.delta.shape == (3, 2)
    assert pred.d_logits.shape == (3, 8)
    assert pred.s_logits.shape == (3, 3, 6)
    assert pred.theta_logits.shape == (3, 12)
    assert not pred.d_logits.data.any() and not pred.theta_logits.data.any()
    np.testing.assert_allclose(confidences(pred), 1 / 8)


def test_decode_params_reencodes_same_bin():
    store = _store()
    # keep residuals inside their bin
    for head in ("d_res", "s_res", "t_res"):
        store[f"dec_obj.{head}.w"].data *= 0.05
    pred = object_decode(dc.Tensor(np.random.default_rng(1).normal(size=(5, 6))), store)
    for n, p in enumerate(decode_params(pred)):
        assert DEPTH_BINS.value_to_bin(p.distance_d)[0] == int(np.argmax(pred.d_logits.data[n]))
        assert THETA_BINS.value_to_bin(p.yaw_theta_cam)[0] == int(np.argmax(pred.theta_logits.data[n]))
        for a in range(3):
            assert LOGSIZE_BINS.value_to_bin(np.log(p.size_s[a]))[0] == int(np.argmax(pred.s_logits.data[n, a]))


def test_relative_decode_zero_is_identity():
    store = _store()
    for _, t in store:
        t.data[...] = 0.0
    z = dc.Tensor(np.zeros((2, 6)))
    out = relative_decode(z, z, z, store)
    for e in range(2):
        r = out.row(e)
        assert not r.delta_c.any() and not r.delta_s_log.any() and r.delta_theta == 0.0


def test_relative_decode_gradients():
    store = _store(seed=2)
    rng = np.random.default_rng(3)
    xs = [dc.parameter(rng.normal(size=(2, 6))) for _ in range(3)]

    def loss():
        out = relative_decode(xs[0], xs[1], xs[2], store)
        return (out.delta_c**2).sum() + (out.delta_s_log**2).sum() + (out.delta_theta**2).sum()

    dc.backward(loss())
    for t in xs:
        assert rel_error(t.grad, numeric_grad(lambda: float(loss().data), t.data)) <= 1e-4


def test_relative_prediction_wraps():
    assert RelativePrediction(np.zeros(3), np.zeros(3), 3 * math.pi).delta_theta == -math.pi


# -- relative transforms


def test_relative_from_gt_identity():
    b = Box3D((1, 2, 3), (1, 2, 0.5), 0.4)
    r = relative_from_gt(b, b)
    assert r.delta_theta == 0.0 and not r.delta_s_log.any()
    # relative-first keeps the rotation-free difference: zero for identical boxes
    assert np.abs(r.delta_c).max() < 1e-15


@pytest.mark.parametrize("order", ["relative_first", "world_first"])
def test_relative_from_gt_round_trip(order):
    rng = np.random.default_rng(4)
    for _ in range(1000):
        bi = Box3D(rng.uniform(-5, 5, 3), rng.uniform(0.1, 3, 3), rng.uniform(-math.pi, math.pi))
        bj = Box3D(rng.uniform(-5, 5, 3), rng.uniform(0.1, 3, 3), rng.uniform(-math.pi, math.pi))
        cand = candidate_box(relative_from_gt(bi, bj, order), bi, order)
        assert np.abs(cand.centroid - bj.centroid).max() < 1e-9
        assert abs(wrap_angle(cand.yaw - bj.yaw)) < 1e-9
        assert np.abs(cand.size - bj.size).max() < 1e-9


@given(boxes, boxes)
def test_delta_theta_antisymmetric(a, b):
    assert abs(wrap_angle(relative_from_gt(a, b).delta_theta + relative_from_gt(b, a).delta_theta)) < 1e-12


@settings(max_examples=50)
@given(boxes, boxes, st.sampled_from(["relative_first", "world_first"]))
def test_closed_form_matches_frames(bi, bj, order):
    rel = RelativePrediction(np.array([0.3, -0.2, 0.1]), np.array([0.1, -0.3, 0.2]), 0.7)
    cand = candidate_box(rel, bi, order)
    yaw, cen, size = compose_yaw_params(
        dc.Tensor([bi.yaw]),
        dc.Tensor(bi.centroid[None]),
        dc.Tensor(bi.size[None]),
        dc.Tensor([rel.delta_theta]),
        dc.Tensor(rel.delta_c[None]),
        dc.Tensor(rel.delta_s_log[None]),
        order,
    )
    assert abs(wrap_angle(yaw.data[0] - cand.yaw)) < 1e-12
    assert np.abs(cen.data[0] - cand.centroid).max() < 1e-12
    assert np.abs(size.data[0] - cand.size).max() < 1e-12


# -- fusion


def _scene(rng, n=4):
    return [Box3D(rng.uniform(-3, 3, 3), rng.uniform(0.3, 2, 3), rng.uniform(-3, 3)) for _ in range(n)]


def test_fuse_alpha_one_is_passthrough():
    rng = np.random.default_rng(5)
    indep = _scene(rng)
    g = SparseSceneGraph(4, [(0, 1, 0.6), (2, 1, 0.4), (1, 3, 1.0)])
    rel = {(i, j): RelativePrediction(rng.normal(size=3), rng.normal(size=3), 0.3) for i, j, _ in g.edges}
    out = holistic_fuse(indep, rel, g, alpha=1.0, beta=0.0)
    assert all(o is b for o, b in zip(out, indep))


def test_fuse_exact_with_ground_truth_inputs():
    rng = np.random.default_rng(6)
    gt = _scene(rng)
    g = SparseSceneGraph(4, [(0, 1, 0.6), (2, 1, 0.4), (1, 3, 1.0), (3, 0, 1.0)])
    rel = {(i, j): relative_from_gt(gt[i], gt[j]) for i, j, _ in g.edges}
    for alpha in (0.0, 0.3, 0.6, 1.0):
        out = holistic_fuse(gt, rel, g, alpha=alpha, beta=1 - alpha)
        for o, b in zip(out, gt):
            assert np.abs(o.centroid - b.centroid).max() < 1e-6
            assert np.abs(o.size - b.size).max() < 1e-6
            assert abs(wrap_angle(o.yaw - b.yaw)) < 1e-6


def test_fuse_isolated_node_passthrough():
    rng = np.random.default_rng(7)
    indep = _scene(rng, 3)
    g = SparseSceneGraph(3, [(0, 1, 1.0)])
    out = holistic_fuse(indep, {(0, 1): relative_from_gt(indep[0], indep[2])}, g)
    assert out[2] is indep[2] and out[0] is indep[0]


def test_fuse_centroid_in_convex_hull():
    rng = np.random.default_rng(8)
    indep = _scene(rng)
    g = SparseSceneGraph(4, [(0, 3, 0.5), (1, 3, 0.3), (2, 3, 0.2)])
    rel = {(i, j): RelativePrediction(rng.normal(size=3), rng.normal(size=3) * 0.1, rng.normal()) for i, j, _ in g.edges}
    out = holistic_fuse(indep, rel, g)
    pts = np.stack([indep[3].centroid] + [candidate_box(rel[(i, 3)], indep[i]).centroid for i in range(3)])
    assert np.all(out[3].centroid >= pts.min(axis=0) - 1e-12)
    assert np.all(out[3].centroid <= pts.max(axis=0) + 1e-12)


def test_fuse_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        holistic_fuse([], {}, SparseSceneGraph(0, []), alpha=0.5, beta=0.6)
