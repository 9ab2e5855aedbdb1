"""Relation-graph 3D bounding-box estimation on synthetic indoor scenes.

Layers, bottom up: :mod:`geometry` (frames, boxes, exact IoU), :mod:`diffcore`
(reverse-mode autodiff), :mod:`relatedness` (pair scores and pruning),
:mod:`graphnet` (message passing), :mod:`decode` and :mod:`loss` (heads and
objectives), :mod:`synthscene` (data), :mod:`evaluation` (metrics),
:mod:`pipeline` (training and inference) and :mod:`cli`.
"""

from .config import ConfigError, RunConfig, load_config
from .geometry import Box3D, CameraPose, iou3d
from .pipeline import RelationalDetector, evaluate, train
from .synthscene import GeneratorConfig, generate_dataset, load_dataset

__version__ = "0.1.0"

__all__ = [
    "Box3D",
    "CameraPose",
    "ConfigError",
    "GeneratorConfig",
    "RelationalDetector",
    "RunConfig",
    "evaluate",
    "generate_dataset",
    "iou3d",
    "load_config",
    "load_dataset",
    "train",
]
