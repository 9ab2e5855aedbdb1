"""
A synthetic room, seen from the ceiling
=======================================

Generate one scene, look at what the camera sees and check that the
camera-space parameters map back onto the world boxes.
"""

import numpy as np

from relgraph3d import GeneratorConfig, iou3d
from relgraph3d.geometry import Box3D, camera_to_world
from relgraph3d.synthscene import CLASS_NAMES, generate_scene

np.set_printoptions(precision=3, suppress=True)

scene = generate_scene(GeneratorConfig(), seed=3)
print(f"camera height {scene.camera_height:.2f} m, pitch {scene.pose.pitch_beta:.3f}, roll {scene.pose.roll_gamma:.3f}")

for o in scene.objects:
    b = o.box3d
    print(f"{CLASS_NAMES[o.class_id]:<11} centroid {b.centroid}  size {b.size}  yaw {b.yaw:+.2f}"
          f"  2D ({o.box2d.x:.0f}, {o.box2d.y:.0f}, {o.box2d.w:.0f}x{o.box2d.h:.0f})")

# %%
# The decoder predicts offset, distance, size and camera yaw per object.
# Converting them back should give the world box again.

worst = 0.0
for o in scene.objects:
    back = camera_to_world(o.camera_params, (o.box2d.x, o.box2d.y), scene.intrinsics, scene.pose)
    worst = max(worst, np.abs(back.centroid - o.box3d.centroid).max())
print("round-trip centroid error:", worst)

# %%
# Oriented IoU: sliding a unit cube along x.

a = Box3D((0, 0, 0), (1, 1, 1), 0.0)
for t in (0.0, 0.25, 0.5, 0.74, 1.0):
    print(f"shift {t:.2f}  IoU {iou3d(a, Box3D((t, 0, 0), (1, 1, 1), 0.0)):.3f}  rotated 45deg {iou3d(a, Box3D((t, 0, 0), (1, 1, 1), np.pi / 4)):.3f}")
