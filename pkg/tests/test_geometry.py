import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relgraph3d.geometry import (
    Box3D,
    CameraPose,
    CameraSpaceParams,
    GeometryError,
    back_project,
    box_corners,
    camera_rotation,
    camera_to_world,
    check_frame,
    compose,
    compose_relative,
    corner_frame,
    extract_pose,
    extract_scale,
    iou3d,
    make_intrinsics,
    pose_frame,
    project_center,
    rotz,
    world_to_camera,
    wrap_angle,
)
from relgraph3d.verify import monte_carlo_iou

angles = st.floats(-10.0, 10.0, allow_nan=False)
coords = st.lists(st.floats(-5.0, 5.0, allow_nan=False), min_size=3, max_size=3)
sizes = st.lists(st.floats(0.05, 4.0, allow_nan=False), min_size=3, max_size=3)
boxes = st.builds(Box3D, coords, sizes, angles)


# -- camera


def test_camera_rotation_identity():
    np.testing.assert_array_equal(camera_rotation(CameraPose(0.0, 0.0)), np.eye(3))


def test_camera_rotation_quarter_pitch():
    r = camera_rotation(CameraPose(math.pi / 2, 0.0))
    np.testing.assert_allclose(r, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)


def test_camera_rotation_orthonormal_example():
    r = camera_rotation(CameraPose(0.3, 0.2))
    assert np.abs(r.T @ r - np.eye(3)).max() < 1e-12


def test_camera_rotation_random_poses():
    rng = np.random.default_rng(1)
    for b, g in rng.uniform(-1.5, 1.5, size=(10_000, 2)):
        r = camera_rotation(CameraPose(b, g))
        assert np.abs(r.T @ r - np.eye(3)).max() < 1e-12
        assert abs(np.linalg.det(r) - 1) <= 1e-12


def test_back_project_principal_ray():
    np.testing.assert_allclose(back_project((0, 0), 2.0, np.eye(3), np.eye(3)), [0, 0, 2])


def test_back_project_hand_example():
    k = np.diag([200.0, 200.0, 1.0])
    v = np.array([0.5, 0.25, 1.0])
    np.testing.assert_allclose(back_project((100, 50), 3.0, k, np.eye(3)), 3 * v / np.linalg.norm(v), atol=1e-15)


def test_back_project_rejects_bad_inputs():
    with pytest.raises(GeometryError):
        back_project((0, 0), 0.0, np.eye(3), np.eye(3))
    with pytest.raises(GeometryError):
        back_project((0, 0), 1.0, np.zeros((3, 3)), np.eye(3))


@given(st.floats(-300, 300), st.floats(-200, 200), st.floats(0.1, 20), st.floats(-1, 1), st.floats(-1, 1))
def test_back_project_norm_and_round_trip(u, v, d, b, g):
    k, r = make_intrinsics(), camera_rotation(CameraPose(b, g))
    c = back_project((u + 320, v + 240), d, k, r)
    assert abs(np.linalg.norm(c) - d) <= 1e-9
    pix, dist = project_center(c, k, r)
    np.testing.assert_allclose(back_project(pix, dist, k, r), c, atol=1e-9)


def test_project_center_examples():
    c, d = project_center((0, 0, 2), np.eye(3), np.eye(3))
    np.testing.assert_array_equal(c, [0, 0])
    assert d == 2.0
    with pytest.raises(GeometryError):
        project_center((0, 0, -1), np.eye(3), np.eye(3))


def test_project_center_round_trip_random():
    rng = np.random.default_rng(2)
    k = make_intrinsics()
    for _ in range(100):
        r = camera_rotation(CameraPose(*rng.uniform(-0.4, 0.4, 2)))
        p = r.T @ np.array([*rng.uniform(-2, 2, 2), rng.uniform(0.5, 6)])
        c, d = project_center(p, k, r)
        assert np.abs(back_project(c, d, k, r) - p).max() < 1e-9


# -- frames


def test_pose_frame_examples():
    np.testing.assert_array_equal(pose_frame(0.0, (0, 0, 0)), np.eye(4))
    t = pose_frame(math.pi, (1, 2, 3))
    np.testing.assert_allclose(t[:3, :3], np.diag([-1, -1, 1]), atol=1e-15)
    np.testing.assert_array_equal(t[:3, 3], [1, 2, 3])


def test_corner_frame_literal_translation():
    np.testing.assert_array_equal(corner_frame(0.0, (0, 0, 0), (2, 2, 2))[:3, 3], [1, 1, 1])
    with pytest.raises(GeometryError):
        corner_frame(0.0, (0, 0, 0), (1, 0, 1))


def test_extract_pose_boundary_and_identity():
    theta, c = extract_pose(pose_frame(-math.pi, (4, 5, 6)))
    assert theta == -math.pi
    np.testing.assert_array_equal(c, [4, 5, 6])
    theta, c = extract_pose(np.eye(4))
    assert theta == 0.0 and not c.any()


def test_extract_pose_rejects_tilted_frames():
    t = np.eye(4)
    t[:3, :3] = camera_rotation(CameraPose(0.0, 0.3))
    with pytest.raises(GeometryError):
        extract_pose(t)


def test_extract_scale_examples():
    t = pose_frame(0.4, (1, 2, 3))
    assert not extract_scale(t, t).any()
    with pytest.raises(GeometryError):
        extract_scale(pose_frame(0.1, (0, 0, 0)), pose_frame(0.2, (0, 0, 0)))


def test_pose_and_scale_round_trips():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        theta = rng.uniform(-math.pi, math.pi)
        c, s = rng.uniform(-5, 5, 3), rng.uniform(0.05, 4, 3)
        t_theta, t_c = extract_pose(pose_frame(theta, c))
        assert abs(wrap_angle(t_theta - theta)) < 1e-12
        assert np.abs(t_c - c).max() < 1e-12
        for mode in ("literal", "rotated"):
            got = extract_scale(corner_frame(theta, c, s, mode), pose_frame(theta, c), mode)
            assert np.abs(got - s).max() < 1e-12


@given(angles, coords, angles, coords, angles, coords)
def test_compose_associative_with_unit(a1, c1, a2, c2, a3, c3):
    a, b, c = pose_frame(a1, c1), pose_frame(a2, c2), pose_frame(a3, c3)
    np.testing.assert_allclose(compose(compose(a, b), c), compose(a, compose(b, c)), atol=1e-12)
    np.testing.assert_array_equal(compose(np.eye(4), a), a)
    np.testing.assert_array_equal(compose(a, np.eye(4)), a)
    check_frame(compose(a, b))
    theta, _ = extract_pose(compose(a, b))
    assert abs(wrap_angle(theta - wrap_angle(a1 + a2))) < 1e-9


def test_compose_relative_orders_differ():
    a, b = pose_frame(0.5, (1, 0, 0)), pose_frame(1.0, (0, 2, 0))
    assert not np.allclose(compose_relative(a, b, "relative_first"), compose_relative(a, b, "world_first"))
    with pytest.raises(GeometryError):
        compose_relative(a, b, "sideways")


def test_wrap_angle_range():
    vals = wrap_angle(np.array([-math.pi, math.pi, 3 * math.pi, -3 * math.pi, 0.0]))
    assert np.all(vals >= -math.pi) and np.all(vals < math.pi)
    assert vals[1] == -math.pi


# -- boxes


def test_unit_cube_corners():
    got = box_corners(Box3D((0, 0, 0), (1, 1, 1), 0.0))
    assert sorted(map(tuple, got)) == sorted(
        (x, y, z) for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)
    )


def test_quarter_turn_swaps_extents():
    got = box_corners(Box3D((0, 0, 0), (2, 1, 1), math.pi / 2))
    np.testing.assert_allclose(np.ptp(got, axis=0), [1, 2, 1], atol=1e-12)


@given(boxes)
def test_corner_mean_is_centroid(box):
    assert np.abs(box_corners(box).mean(axis=0) - box.centroid).max() < 1e-12


def test_box_rejects_non_positive_size():
    with pytest.raises(GeometryError):
        Box3D((0, 0, 0), (1, -1, 1), 0.0)


def test_iou_examples():
    a = Box3D((0, 0, 0), (1, 1, 1), 0.0)
    assert iou3d(a, a) == pytest.approx(1.0, abs=1e-12)
    assert iou3d(a, Box3D((0.5, 0, 0), (1, 1, 1), 0.0)) == pytest.approx(1 / 3, abs=1e-12)
    assert iou3d(a, Box3D((5, 0, 0), (1, 1, 1), 0.3)) == 0.0


def test_iou_rotated_square_analytic():
    # a unit square turned by 45 degrees inside another: overlap is the octagon of area 2(sqrt2 - 1)
    a = Box3D((0, 0, 0), (1, 1, 1), 0.0)
    b = Box3D((0, 0, 0), (1, 1, 1), math.pi / 4)
    inter = 2 * (math.sqrt(2) - 1)
    assert iou3d(a, b) == pytest.approx(inter / (2 - inter), abs=1e-12)


@settings(max_examples=200)
@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    v = iou3d(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(iou3d(b, a), abs=1e-12)


@given(boxes)
def test_iou_self_is_one(a):
    assert iou3d(a, a) == pytest.approx(1.0, abs=1e-12)


@given(boxes, st.floats(0.01, 1.0))
def test_iou_below_one_when_moved(a, shift):
    b = Box3D(a.centroid + np.array([shift, 0, 0]), a.size, a.yaw)
    assert iou3d(a, b) < 1.0 - 1e-12


def test_iou_matches_monte_carlo():
    rng = np.random.default_rng(4)
    for _ in range(30):
        a = Box3D(rng.uniform(-0.6, 0.6, 3), rng.uniform(0.2, 2, 3), rng.uniform(-3, 3))
        b = Box3D(rng.uniform(-0.6, 0.6, 3), rng.uniform(0.2, 2, 3), rng.uniform(-3, 3))
        assert abs(iou3d(a, b) - monte_carlo_iou(a, b, 200_000, rng)) <= 0.01


# -- camera <-> world


def test_identity_camera_keeps_yaw():
    p = CameraSpaceParams((0, 0), 3.0, (1, 1, 1), 0.7)
    box = camera_to_world(p, (100, 80), make_intrinsics(), CameraPose())
    assert box.yaw == pytest.approx(0.7)
    np.testing.assert_allclose(box.centroid, back_project((100, 80), 3.0, make_intrinsics(), np.eye(3)))


@given(st.floats(-0.4, 0.4), st.floats(-0.15, 0.15), st.floats(-3.1, 3.1), st.floats(0.5, 6), st.floats(-5, 5), st.floats(-5, 5))
def test_camera_world_round_trip(b, g, theta, d, dx, dy):
    k, pose = make_intrinsics(), CameraPose(b, g)
    p = CameraSpaceParams((dx, dy), d, (1.0, 0.5, 0.8), theta)
    box = camera_to_world(p, (320, 240), k, pose)
    assert np.linalg.norm(box.centroid) == pytest.approx(d, abs=1e-9)
    back = world_to_camera(box, (320, 240), k, pose)
    np.testing.assert_allclose(back.offset_delta, p.offset_delta, atol=1e-6)
    assert back.distance_d == pytest.approx(d, abs=1e-9)
    again = camera_to_world(back, (320, 240), k, pose)
    assert np.abs(again.centroid - box.centroid).max() < 1e-6
    assert abs(wrap_angle(again.yaw - box.yaw)) < 1e-9


def test_rotz_matches_pose_frame():
    np.testing.assert_array_equal(pose_frame(0.3, (0, 0, 0))[:3, :3], rotz(0.3))
