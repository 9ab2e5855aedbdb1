"""
Which neighbours does each object listen to?
============================================

Score every ordered pair of objects, cluster each target's incoming scores
and keep the strongest edge of every cluster.
"""

import numpy as np

from relgraph3d.pipeline import label_table
from relgraph3d.relatedness import cluster_scores, default_geometry_weights, prune, relatedness_matrix
from relgraph3d.synthscene import CLASS_NAMES, GeneratorConfig, generate_scene

np.set_printoptions(precision=3, suppress=True)

scene = generate_scene(GeneratorConfig(n_objects=(6, 6)), seed=12)
boxes = [o.box2d for o in scene.objects]
names = [CLASS_NAMES[o.class_id] for o in scene.objects]
print("objects:", ", ".join(f"{k}:{n}" for k, n in enumerate(names)))

m = relatedness_matrix(boxes, label_table(), default_geometry_weights())
print("scores (row = source, column = target); columns sum to one")
print(m.scores)
print("column sums:", m.scores.sum(axis=0))

# %%
# 1-D k-means on one column, K = 3

col = m.scores[1:, 0]
print("incoming to", names[0], col)
for c in cluster_scores(col, 3):
    print("  cluster", [round(float(col[i]), 3) for i in c])

# %%
# The pruned graph keeps at most K edges per target, renormalized.

g = prune(m, 3)
print(g.to_text())
