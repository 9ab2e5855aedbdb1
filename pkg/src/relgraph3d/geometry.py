"""Box parameterization, camera model and yaw-frame algebra.

Conventions used throughout the package:

* World and camera systems share the origin.  With zero pitch and roll the
  two coincide and the optical axis is +Z.
* Objects are upright: their only rotational degree of freedom is a yaw
  about the world Z axis.  In the synthetic scenes Z points from the
  (ceiling-mounted) camera toward the floor.
* Angles are wrapped to ``[-pi, pi)`` after every addition or subtraction.
* Homogeneous frames are plain ``(4, 4)`` float arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi

# Corner sign pattern; the first four corners are the bottom face in CCW
# order when seen from +Z, the last four repeat them on the top face.
CORNER_SIGNS = np.array(
    [
        [-1, -1, -1],
        [1, -1, -1],
        [1, 1, -1],
        [-1, 1, -1],
        [-1, -1, 1],
        [1, -1, 1],
        [1, 1, 1],
        [-1, 1, 1],
    ],
    dtype=np.float64,
)

CORNER_MODES = ("literal", "rotated")
COMPOSE_ORDERS = ("relative_first", "world_first")


class GeometryError(ValueError):
    """Raised on inputs violating a geometric precondition."""


def wrap_angle(theta):
    """Wrap angle(s) to ``[-pi, pi)``."""
    out = np.mod(np.asarray(theta, dtype=np.float64) + np.pi, TWO_PI) - np.pi
    # fmod rounding can land exactly on +pi
    out = np.where(out >= np.pi, out - TWO_PI, out)
    if np.ndim(out) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class CameraPose:
    pitch_beta: float = 0.0
    roll_gamma: float = 0.0


@dataclass(frozen=True, eq=False)
class Box3D:
    """World-frame box: centroid (m), full per-axis extents (m) and yaw."""

    centroid: np.ndarray
    size: np.ndarray
    yaw: float

    def __post_init__(self):
        c = np.array(self.centroid, dtype=np.float64).reshape(3)
        s = np.array(self.size, dtype=np.float64).reshape(3)
        if not np.all(s > 0):
            raise GeometryError(f"box size must be positive, got {s}")
        object.__setattr__(self, "centroid", c)
        object.__setattr__(self, "size", s)
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    def to_dict(self) -> dict:
        return {"centroid": self.centroid.tolist(), "size": self.size.tolist(), "yaw": self.yaw}

    @classmethod
    def from_dict(cls, d: dict) -> "Box3D":
        return cls(d["centroid"], d["size"], d["yaw"])

    def volume(self) -> float:
        return float(np.prod(self.size))


@dataclass(frozen=True, eq=False)
class CameraSpaceParams:
    """Per-object parameters the object decoder predicts (camera system)."""

    offset_delta: np.ndarray
    distance_d: float
    size_s: np.ndarray
    yaw_theta_cam: float

    def __post_init__(self):
        if not self.distance_d > 0:
            raise GeometryError(f"distance must be positive, got {self.distance_d}")
        object.__setattr__(self, "offset_delta", np.array(self.offset_delta, dtype=np.float64).reshape(2))
        object.__setattr__(self, "size_s", np.array(self.size_s, dtype=np.float64).reshape(3))
        object.__setattr__(self, "distance_d", float(self.distance_d))
        object.__setattr__(self, "yaw_theta_cam", wrap_angle(float(self.yaw_theta_cam)))

    def to_dict(self) -> dict:
        return {
            "offset_delta": self.offset_delta.tolist(),
            "distance_d": self.distance_d,
            "size_s": self.size_s.tolist(),
            "yaw_theta_cam": self.yaw_theta_cam,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraSpaceParams":
        return cls(d["offset_delta"], d["distance_d"], d["size_s"], d["yaw_theta_cam"])


def make_intrinsics(focal: float = 520.0, width: int = 640, height: int = 480) -> np.ndarray:
    return np.array(
        [[focal, 0.0, width / 2.0], [0.0, focal, height / 2.0], [0.0, 0.0, 1.0]],
        dtype=np.float64,
    )


def _inv_intrinsics(k) -> np.ndarray:
    k = np.asarray(k, dtype=np.float64)
    if k.shape != (3, 3):
        raise GeometryError(f"intrinsics must be 3x3, got shape {k.shape}")
    if not np.isfinite(k).all() or np.linalg.cond(k) > 1e12:
        raise GeometryError("camera intrinsics are singular")
    return np.linalg.inv(k)


def rotz(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def camera_rotation(pose: CameraPose) -> np.ndarray:
    """Camera extrinsic rotation from pitch and roll.

    The matrix is ``Rz(pitch) @ Rx(roll)``, written out entry by entry.
    """
    b, g = pose.pitch_beta, pose.roll_gamma
    cb, sb, cg, sg = np.cos(b), np.sin(b), np.cos(g), np.sin(g)
    return np.array(
        [
            [cb, -cg * sb, sb * sg],
            [sb, cb * cg, -cb * sg],
            [0.0, sg, cg],
        ]
    )


def back_project(c, d: float, k, r) -> np.ndarray:
    """Lift an image point at distance ``d`` into the world system.

    The viewing ray ``K^-1 [c, 1]`` is normalized, scaled by ``d`` and rotated
    back with ``r^T``; the result therefore always has norm ``d``.
    """
    if not d > 0:
        raise GeometryError(f"distance must be positive, got {d}")
    kinv = _inv_intrinsics(k)
    ray = kinv @ np.array([c[0], c[1], 1.0])
    return np.asarray(r, dtype=np.float64).T @ (d * ray / np.linalg.norm(ray))


def project_center(C, k, r) -> tuple[np.ndarray, float]:
    """Inverse of :func:`back_project`: pixel position and distance of ``C``."""
    p = np.asarray(r, dtype=np.float64) @ np.asarray(C, dtype=np.float64)
    if not p[2] > 0:
        raise GeometryError(f"point {C} is behind the camera")
    q = np.asarray(k, dtype=np.float64) @ p
    return q[:2] / q[2], float(np.linalg.norm(C))


def project_points(points, k, r) -> np.ndarray:
    """Pixel coordinates of world points (rows); all must have positive depth."""
    p = np.asarray(points, dtype=np.float64) @ np.asarray(r).T
    if not np.all(p[:, 2] > 0):
        raise GeometryError("point behind the camera")
    q = p @ np.asarray(k).T
    return q[:, :2] / q[:, 2:3]


def pose_frame(theta: float, c) -> np.ndarray:
    t = np.eye(4)
    t[:3, :3] = rotz(theta)
    t[:3, 3] = c
    return t


def half_extent(theta: float, s, mode: str = "literal") -> np.ndarray:
    """Offset from the box origin to the corner-frame origin."""
    s = np.asarray(s, dtype=np.float64)
    if mode == "literal":
        return s / 2.0
    if mode == "rotated":
        return rotz(theta) @ s / 2.0
    raise GeometryError(f"unknown corner mode {mode!r}")


def corner_frame(theta: float, c, s, mode: str = "literal") -> np.ndarray:
    """Box frame translated to ``c + s/2``.

    In ``literal`` mode the half extent is added in world axes as written;
    ``rotated`` mode first rotates it by the box yaw so the origin lands on a
    true corner.
    """
    s = np.asarray(s, dtype=np.float64)
    if not np.all(s > 0):
        raise GeometryError(f"box size must be positive, got {s}")
    t = pose_frame(theta, c)
    t[:3, 3] += half_extent(theta, s, mode)
    return t


def check_frame(t, atol: float = 1e-9) -> None:
    t = np.asarray(t)
    if t.shape != (4, 4):
        raise GeometryError(f"frame must be 4x4, got {t.shape}")
    if not np.allclose(t[3], [0, 0, 0, 1], atol=atol, rtol=0):
        raise GeometryError("frame bottom row must be [0, 0, 0, 1]")
    rot = t[:3, :3]
    if not (
        np.allclose(rot[2], [0, 0, 1], atol=atol, rtol=0)
        and np.allclose(rot[:2, 2], 0, atol=atol, rtol=0)
        and np.allclose(rot.T @ rot, np.eye(3), atol=atol, rtol=0)
        and abs(np.linalg.det(rot) - 1.0) < atol
    ):
        raise GeometryError("rotation block is not a pure Z-yaw rotation")


def compose(a, b) -> np.ndarray:
    return np.asarray(a) @ np.asarray(b)


def compose_relative(rel_frame, world_frame, order: str = "relative_first") -> np.ndarray:
    """Chain a relative frame with a world frame in the configured order."""
    if order == "relative_first":
        return compose(rel_frame, world_frame)
    if order == "world_first":
        return compose(world_frame, rel_frame)
    raise GeometryError(f"unknown compose order {order!r}")


def extract_pose(t) -> tuple[float, np.ndarray]:
    check_frame(t)
    t = np.asarray(t)
    return wrap_angle(np.arctan2(t[1, 0], t[0, 0])), t[:3, 3].copy()


def extract_scale(b, t, mode: str = "literal") -> np.ndarray:
    """Recover full extents from a corner frame and its pose frame."""
    b, t = np.asarray(b), np.asarray(t)
    check_frame(b)
    check_frame(t)
    if not np.allclose(b[:3, :3], t[:3, :3], atol=1e-9, rtol=0):
        raise GeometryError("corner and pose frames have different rotations")
    diff = 2.0 * (b[:3, 3] - t[:3, 3])
    if mode == "literal":
        return diff
    if mode == "rotated":
        return t[:3, :3].T @ diff
    raise GeometryError(f"unknown corner mode {mode!r}")


def box_corners(box: Box3D) -> np.ndarray:
    """``(8, 3)`` world coordinates of the box vertices."""
    local = CORNER_SIGNS * box.size / 2.0
    return local @ rotz(box.yaw).T + box.centroid


def footprint(box: Box3D) -> np.ndarray:
    """CCW ``(4, 2)`` polygon of the box projected on the XY plane."""
    return box_corners(box)[:4, :2]


def polygon_area(poly) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_convex(subject, clip) -> np.ndarray:
    """Sutherland-Hodgman clipping of a polygon by a convex CCW polygon."""
    out = [np.asarray(p, dtype=np.float64) for p in subject]
    clip = np.asarray(clip, dtype=np.float64)
    for k in range(len(clip)):
        if not out:
            break
        a, b = clip[k], clip[(k + 1) % len(clip)]
        edge = b - a

        def side(p):
            return edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0])

        inp, out = out, []
        prev = inp[-1]
        s_prev = side(prev)
        for cur in inp:
            s_cur = side(cur)
            if s_cur >= 0:
                if s_prev < 0:
                    out.append(prev + (cur - prev) * (s_prev / (s_prev - s_cur)))
                out.append(cur)
            elif s_prev >= 0:
                out.append(prev + (cur - prev) * (s_prev / (s_prev - s_cur)))
            prev, s_prev = cur, s_cur
    return np.array(out).reshape(-1, 2)


def intersection_volume(a: Box3D, b: Box3D) -> float:
    za = (a.centroid[2] - a.size[2] / 2, a.centroid[2] + a.size[2] / 2)
    zb = (b.centroid[2] - b.size[2] / 2, b.centroid[2] + b.size[2] / 2)
    dz = min(za[1], zb[1]) - max(za[0], zb[0])
    if dz <= 0:
        return 0.0
    # clip around a's center so the shoelace sum does not cancel far from the origin
    origin = a.centroid[:2]
    area = polygon_area(clip_convex(footprint(a) - origin, footprint(b) - origin))
    return max(area, 0.0) * dz


def iou3d(a: Box3D, b: Box3D) -> float:
    """Exact volumetric IoU of two Z-yaw boxes."""
    inter = intersection_volume(a, b)
    union = a.volume() + b.volume() - inter
    return float(min(max(inter / union, 0.0), 1.0))


def world_yaw(theta_cam: float, r) -> float:
    """Closest Z-yaw of ``r @ Rz(theta_cam)``."""
    r = np.asarray(r)
    c, s = np.cos(theta_cam), np.sin(theta_cam)
    return wrap_angle(np.arctan2(r[1, 0] * c + r[1, 1] * s, r[0, 0] * c + r[0, 1] * s))


def camera_yaw(theta_world: float, r) -> float:
    """Inverse of :func:`world_yaw`: the camera yaw that maps to ``theta_world``."""
    r = np.asarray(r)
    cw, sw = np.cos(theta_world), np.sin(theta_world)
    # (r00 c + r01 s) sw - (r10 c + r11 s) cw = 0
    a = sw * r[0, 0] - cw * r[1, 0]
    b = sw * r[0, 1] - cw * r[1, 1]
    theta = np.arctan2(-a, b)
    c, s = np.cos(theta), np.sin(theta)
    if (r[0, 0] * c + r[0, 1] * s) * cw + (r[1, 0] * c + r[1, 1] * s) * sw < 0:
        theta += np.pi
    return wrap_angle(theta)


def camera_to_world(p: CameraSpaceParams, c2d, k, pose: CameraPose) -> Box3D:
    r = camera_rotation(pose)
    centroid = back_project(np.asarray(c2d, dtype=np.float64) + p.offset_delta, p.distance_d, k, r)
    return Box3D(centroid, p.size_s, world_yaw(p.yaw_theta_cam, r))


def world_to_camera(box: Box3D, c2d, k, pose: CameraPose) -> CameraSpaceParams:
    """Camera-space parameters of ``box`` relative to the 2D box center ``c2d``."""
    r = camera_rotation(pose)
    c, d = project_center(box.centroid, k, r)
    return CameraSpaceParams(c - np.asarray(c2d, dtype=np.float64), d, box.size, camera_yaw(box.yaw, r))
