"""Deterministic synthetic indoor scenes with exact 3D/2D ground truth.

The camera hangs from the ceiling and looks down along world +Z (toward the
floor), tilted by a small pitch and roll.  Furniture stands on the floor
plane ``z = camera_height`` with its centroid half its height above it.
Furniture in a room shares a common orientation up to a small jitter, and
beds are often flanked by nightstands; those two regularities give the
graph something to reason about.

Object features stand in for an image encoder: normalized 2D box geometry,
a class one-hot and an "appearance" block holding a noisy yaw cue (present
only for visible objects) and noisy size cues.

Dataset file (JSON lines): a header record
``{"schema": "relgraph3d-synthscene", "version": 1, "n_scenes", "master_seed",
"generator", "train_ids", "test_ids"}`` followed by one record per scene as
produced by :meth:`SceneSample.to_dict`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (
    Box3D,
    CameraPose,
    CameraSpaceParams,
    GeometryError,
    box_corners,
    camera_rotation,
    make_intrinsics,
    project_points,
    world_to_camera,
)
from .relatedness import Box2D

log = logging.getLogger(__name__)

SCHEMA = "relgraph3d-synthscene"
SCHEMA_VERSION = 1

CLASS_NAMES = ("bed", "chair", "sofa", "table", "desk", "dresser", "nightstand", "sink", "cabinet", "lamp")
BED, NIGHTSTAND = CLASS_NAMES.index("bed"), CLASS_NAMES.index("nightstand")

# (length, width, height) in meters
SIZE_PRIORS = {
    "bed": (2.0, 1.6, 0.6),
    "chair": (0.5, 0.5, 0.9),
    "sofa": (2.0, 0.9, 0.8),
    "table": (1.4, 0.8, 0.75),
    "desk": (1.2, 0.6, 0.75),
    "dresser": (1.2, 0.5, 1.0),
    "nightstand": (0.5, 0.45, 0.55),
    "sink": (0.6, 0.5, 0.9),
    "cabinet": (0.9, 0.5, 1.8),
    "lamp": (0.35, 0.35, 1.4),
}

CLASS_MARGINALS = {
    "bed": 0.10,
    "chair": 0.16,
    "sofa": 0.08,
    "table": 0.10,
    "desk": 0.08,
    "dresser": 0.07,
    "nightstand": 0.13,
    "sink": 0.06,
    "cabinet": 0.10,
    "lamp": 0.12,
}

RELATED_CLASSES = (("bed", "nightstand"), ("table", "chair"), ("desk", "chair"), ("sink", "cabinet"))

OBJECT_FEATURE_DIM = 6 + len(CLASS_NAMES) + 6


class GenerationError(RuntimeError):
    pass


class DatasetError(RuntimeError):
    pass


class DatasetSchemaError(DatasetError):
    pass


class DatasetVersionError(DatasetError):
    pass


class DatasetCorruptError(DatasetError):
    pass


@dataclass
class GeneratorConfig:
    class_marginals: dict = field(default_factory=lambda: dict(CLASS_MARGINALS))
    size_priors: dict = field(default_factory=lambda: {k: list(v) for k, v in SIZE_PRIORS.items()})
    size_sigma: float = 0.1
    n_objects: tuple = (3, 8)
    camera_height: tuple = (3.6, 4.6)
    pitch_range: float = 0.4
    roll_range: float = 0.15
    image_width: int = 640
    image_height: int = 480
    focal: float = 520.0
    yaw_jitter: float = 0.12
    nightstand_prob: float = 0.7
    nightstand_gap: float = 0.8
    visible_prob: float = 0.6
    feature_noise: float = 0.1
    pixel_margin: float = 20.0
    placement_tries: int = 150
    max_attempts: int = 100

    def __post_init__(self):
        self.n_objects = tuple(self.n_objects)
        self.camera_height = tuple(self.camera_height)
        probs = [self.nightstand_prob, self.visible_prob]
        if any(not 0 <= p <= 1 for p in probs):
            raise ValueError("probabilities must lie in [0, 1]")
        if any(v <= 0 for v in self.class_marginals.values()) or set(self.class_marginals) != set(CLASS_NAMES):
            raise ValueError("class marginals must be positive and cover every class")
        if any(x <= 0 for s in self.size_priors.values() for x in s):
            raise ValueError("size priors must be positive")

    def intrinsics(self) -> np.ndarray:
        return make_intrinsics(self.focal, self.image_width, self.image_height)

    def anchor_probs(self) -> np.ndarray:
        """Sampling probabilities that account for spawned nightstands.

        Every drawn bed adds on average ``1.5 * nightstand_prob`` nightstands,
        so beds and the remaining classes are drawn proportionally more often
        and nightstands less, leaving the final class frequencies close to
        ``class_marginals``.
        """
        p = np.array([self.class_marginals[c] for c in CLASS_NAMES], dtype=np.float64)
        p = p / p.sum()
        spawn = 1.5 * self.nightstand_prob
        total = 1.0 / (1.0 - spawn * p[BED])
        q = p * total
        q[NIGHTSTAND] = max(p[NIGHTSTAND] * total - spawn * q[BED], 0.0)
        return q / q.sum()


@dataclass
class SceneObject:
    class_id: int
    box3d: Box3D
    box2d: Box2D
    camera_params: CameraSpaceParams
    feature: np.ndarray
    visible: bool

    def to_dict(self) -> dict:
        return {
            "class_id": self.class_id,
            "box3d": self.box3d.to_dict(),
            "box2d": self.box2d.to_dict(),
            "camera_params": self.camera_params.to_dict(),
            "feature": self.feature.tolist(),
            "visible": self.visible,
        }

    @classmethod
    def from_dict(cls, d) -> "SceneObject":
        return cls(
            int(d["class_id"]),
            Box3D.from_dict(d["box3d"]),
            Box2D.from_dict(d["box2d"]),
            CameraSpaceParams.from_dict(d["camera_params"]),
            np.asarray(d["feature"], dtype=np.float64),
            bool(d["visible"]),
        )


@dataclass
class SceneSample:
    scene_id: int
    seed: int
    pose: CameraPose
    intrinsics: np.ndarray
    camera_height: float
    objects: list

    def __len__(self):
        return len(self.objects)

    @property
    def rotation(self) -> np.ndarray:
        return camera_rotation(self.pose)

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "seed": self.seed,
            "pose": {"pitch_beta": self.pose.pitch_beta, "roll_gamma": self.pose.roll_gamma},
            "intrinsics": self.intrinsics.tolist(),
            "camera_height": self.camera_height,
            "objects": [o.to_dict() for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d) -> "SceneSample":
        return cls(
            int(d["scene_id"]),
            int(d["seed"]),
            CameraPose(**d["pose"]),
            np.asarray(d["intrinsics"], dtype=np.float64),
            float(d["camera_height"]),
            [SceneObject.from_dict(o) for o in d["objects"]],
        )


@dataclass
class Dataset:
    scenes: list
    train_ids: list
    test_ids: list
    master_seed: int = 0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)

    @property
    def train(self) -> list:
        ids = set(self.train_ids)
        return [s for s in self.scenes if s.scene_id in ids]

    @property
    def test(self) -> list:
        ids = set(self.test_ids)
        return [s for s in self.scenes if s.scene_id in ids]


# ---------------------------------------------------------------- generation


def _box2d_from_corners(pix, class_id) -> Box2D:
    x0, y0 = pix.min(axis=0)
    x1, y1 = pix.max(axis=0)
    return Box2D(float((x0 + x1) / 2), float((y0 + y1) / 2), float(x1 - x0), float(y1 - y0), int(class_id), 1.0)


def object_feature(box2d: Box2D, cam: CameraSpaceParams, class_id, visible, cfg: GeneratorConfig, rng) -> np.ndarray:
    w_img, h_img = cfg.image_width, cfg.image_height
    geo = [
        box2d.x / w_img - 0.5,
        box2d.y / h_img - 0.5,
        box2d.w / w_img,
        box2d.h / h_img,
        np.log(box2d.w / w_img),
        np.log(box2d.h / h_img),
    ]
    onehot = np.zeros(len(CLASS_NAMES))
    onehot[class_id] = 1.0
    v = 1.0 if visible else 0.0
    prior = np.log(cfg.size_priors[CLASS_NAMES[class_id]])
    appearance = np.concatenate(
        [[v * np.cos(cam.yaw_theta_cam), v * np.sin(cam.yaw_theta_cam), v], np.log(cam.size_s) - prior]
    )
    appearance = appearance + cfg.feature_noise * rng.standard_normal(appearance.shape)
    return np.concatenate([geo, onehot, appearance])


def _draw_classes(n_total, cfg: GeneratorConfig, rng) -> list[int]:
    # spawned nightstands may push a scene past n_total, never past the maximum
    q = cfg.anchor_probs()
    classes = []
    while len(classes) < n_total:
        c = int(rng.choice(len(CLASS_NAMES), p=q))
        classes.append(c)
        if c == BED and rng.random() < cfg.nightstand_prob:
            classes += [NIGHTSTAND] * int(rng.integers(1, 3))
    return classes[: cfg.n_objects[1]]


def _aabb_xy(box: Box3D):
    xy = box_corners(box)[:4, :2]
    return xy.min(axis=0), xy.max(axis=0)


def _separated(box: Box3D, others, margin=0.02) -> bool:
    lo, hi = _aabb_xy(box)
    for o in others:
        olo, ohi = _aabb_xy(o)
        if np.all(lo < ohi + margin) and np.all(olo < hi + margin):
            return False
    return True


def _draw_scene_classes(seed, cfg: GeneratorConfig) -> list[int]:
    rng = np.random.default_rng([seed, 0xC1A55])
    n_total = int(rng.integers(cfg.n_objects[0], cfg.n_objects[1] + 1))
    return _draw_classes(n_total, cfg, rng)


def _try_scene(scene_id, seed, attempt, classes, cfg: GeneratorConfig) -> SceneSample | None:
    rng = np.random.default_rng([seed, attempt])
    k = cfg.intrinsics()
    kinv = np.linalg.inv(k)
    height = float(rng.uniform(*cfg.camera_height))
    pose = CameraPose(float(rng.uniform(-cfg.pitch_range, cfg.pitch_range)), float(rng.uniform(-cfg.roll_range, cfg.roll_range)))
    r = camera_rotation(pose)
    room_yaw = float(rng.uniform(-np.pi, np.pi))

    boxes, labels, beds = [], [], []
    margin = cfg.pixel_margin

    # the centroid must land inside the image; boxes may be cut by the frame
    def in_view(box):
        try:
            project_points(box_corners(box), k, r)
            pix = project_points(box.centroid[None], k, r)[0]
        except GeometryError:
            return False
        return margin <= pix[0] <= cfg.image_width - margin and margin <= pix[1] <= cfg.image_height - margin

    # large footprints first; beds before their nightstands
    def footprint(i):
        length, width, _ = cfg.size_priors[CLASS_NAMES[classes[i]]]
        return length * width

    order = sorted(range(len(classes)), key=lambda i: (classes[i] == NIGHTSTAND, -footprint(i), i))
    for idx in order:
        c = classes[idx]
        prior = np.asarray(cfg.size_priors[CLASS_NAMES[c]], dtype=np.float64)
        placed = None
        for attempt_i in range(cfg.placement_tries):
            size = prior * np.exp(cfg.size_sigma * rng.standard_normal(3))
            z = height - size[2] / 2.0
            # bedside slots first, then anywhere in the room
            if c == NIGHTSTAND and beds and attempt_i < cfg.placement_tries // 2:
                bed = beds[int(rng.integers(len(beds)))]
                yaw = bed.yaw + 0.03 * rng.standard_normal()
                side = 1.0 if rng.random() < 0.5 else -1.0
                gap = rng.uniform(0.05, cfg.nightstand_gap - 0.3)
                local = np.array(
                    [
                        -bed.size[0] / 2 + size[0] / 2 + rng.uniform(0.0, 0.2),
                        side * (bed.size[1] / 2 + size[1] / 2 + gap),
                    ]
                )
                cy, sy = np.cos(bed.yaw), np.sin(bed.yaw)
                xy = bed.centroid[:2] + np.array([cy * local[0] - sy * local[1], sy * local[0] + cy * local[1]])
                centroid = np.array([xy[0], xy[1], z])
            else:
                yaw = room_yaw + cfg.yaw_jitter * rng.standard_normal()
                pix = rng.uniform([40, 40], [cfg.image_width - 40, cfg.image_height - 40])
                ray = r.T @ (kinv @ np.array([pix[0], pix[1], 1.0]))
                if ray[2] <= 0:
                    continue
                centroid = ray * (z / ray[2])
            box = Box3D(centroid, size, yaw)
            if in_view(box) and _separated(box, boxes):
                placed = box
                break
        if placed is None:
            return None
        boxes.append(placed)
        labels.append(c)
        if c == BED:
            beds.append(placed)

    perm = rng.permutation(len(boxes))
    objects = []
    for p in perm:
        box, c = boxes[p], labels[p]
        b2 = _box2d_from_corners(project_points(box_corners(box), k, r), c)
        cam = world_to_camera(box, (b2.x, b2.y), k, pose)
        visible = bool(rng.random() < cfg.visible_prob)
        feat = object_feature(b2, cam, c, visible, cfg, rng)
        objects.append(SceneObject(c, box, b2, cam, feat, visible))
    return SceneSample(scene_id, seed, pose, k, height, objects)


def generate_scene(cfg: GeneratorConfig, seed: int, scene_id: int = 0) -> SceneSample:
    """One scene, a pure function of ``(cfg, seed)``.

    The class list is drawn once per seed; only the layout is re-sampled when
    placement fails, so rejections do not skew class frequencies.
    """
    classes = _draw_scene_classes(seed, cfg)
    for attempt in range(cfg.max_attempts):
        scene = _try_scene(scene_id, seed, attempt, classes, cfg)
        if scene is not None:
            return scene
    raise GenerationError(f"scene {scene_id} (seed {seed}): placement failed after {cfg.max_attempts} attempts")


def scene_seed(master_seed: int, index: int) -> int:
    return int(master_seed) * 1_000_003 + index


def generate_dataset(cfg: GeneratorConfig, n_scenes: int, master_seed: int = 0, path=None) -> Dataset:
    """Generate ``n_scenes`` scenes with an 80/20 train/test split by scene id."""
    scenes = [generate_scene(cfg, scene_seed(master_seed, i), scene_id=i) for i in range(n_scenes)]
    n_train = int(round(0.8 * n_scenes))
    ds = Dataset(scenes, list(range(n_train)), list(range(n_train, n_scenes)), master_seed, cfg)
    if path is not None:
        save_dataset(path, ds)
    return ds


def _config_to_dict(cfg: GeneratorConfig) -> dict:
    d = asdict(cfg)
    d["n_objects"] = list(cfg.n_objects)
    d["camera_height"] = list(cfg.camera_height)
    return d


def save_dataset(path, ds: Dataset) -> None:
    header = {
        "schema": SCHEMA,
        "version": SCHEMA_VERSION,
        "n_scenes": len(ds.scenes),
        "master_seed": ds.master_seed,
        "generator": _config_to_dict(ds.generator),
        "train_ids": ds.train_ids,
        "test_ids": ds.test_ids,
    }
    lines = [json.dumps(header)] + [json.dumps(s.to_dict()) for s in ds.scenes]
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    """Read a dataset file, raising a distinct error per failure kind."""
    text = Path(path).read_text()
    lines = text.split("\n")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DatasetCorruptError(f"{path}: unreadable header") from e
    if not isinstance(header, dict) or header.get("schema") != SCHEMA:
        raise DatasetSchemaError(f"{path}: not a {SCHEMA} file")
    if header.get("version") != SCHEMA_VERSION:
        raise DatasetVersionError(f"{path}: version {header.get('version')} != {SCHEMA_VERSION}")
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != header["n_scenes"] or not text.endswith("\n"):
        raise DatasetCorruptError(f"{path}: expected {header['n_scenes']} scenes, found {len(body)} (truncated?)")
    scenes = []
    for ln in body:
        try:
            scenes.append(SceneSample.from_dict(json.loads(ln)))
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise DatasetCorruptError(f"{path}: bad scene record") from e
    try:
        gen = GeneratorConfig(**header["generator"])
    except (TypeError, ValueError) as e:
        raise DatasetSchemaError(f"{path}: bad generator block") from e
    return Dataset(scenes, list(header["train_ids"]), list(header["test_ids"]), int(header["master_seed"]), gen)


# ---------------------------------------------------------------- statistics


def class_histogram(ds: Dataset) -> np.ndarray:
    counts = np.zeros(len(CLASS_NAMES))
    for s in ds.scenes:
        for o in s.objects:
            counts[o.class_id] += 1
    return counts / counts.sum()


def relational_signal(ds: Dataset) -> dict:
    """How much closer nightstands sit to beds than to other furniture.

    Returns mean nearest-bed distance, mean nearest-other distance and the
    Pearson correlation of nightstand and nearest-bed x coordinates.  A
    sanity statistic only.
    """
    d_bed, d_other, xs, xb = [], [], [], []
    for s in ds.scenes:
        beds = [o.box3d for o in s.objects if o.class_id == BED]
        others = [o.box3d for o in s.objects if o.class_id not in (BED, NIGHTSTAND)]
        for o in s.objects:
            if o.class_id != NIGHTSTAND or not beds:
                continue
            c = o.box3d.centroid[:2]
            dist = [np.linalg.norm(b.centroid[:2] - c) for b in beds]
            nearest = beds[int(np.argmin(dist))]
            d_bed.append(min(dist))
            xs.append(c[0])
            xb.append(nearest.centroid[0])
            if others:
                d_other.append(min(np.linalg.norm(b.centroid[:2] - c) for b in others))
    corr = float(np.corrcoef(xs, xb)[0, 1]) if len(xs) > 2 else float("nan")
    return {
        "nightstand_to_bed": float(np.mean(d_bed)) if d_bed else float("nan"),
        "nightstand_to_other": float(np.mean(d_other)) if d_other else float("nan"),
        "x_correlation": corr,
    }
